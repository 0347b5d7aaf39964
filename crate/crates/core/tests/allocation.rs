use evac_core::allocation::{
    allocate, blocking_table, compute_excess, phase1_allocate, phase2_redistribute, redistribution_weights,
    NetworkTopology,
};
use evac_core::station::StationConfig;
use evac_core::Location;
use proptest::prelude::*;

fn topology(points: &[(f64, f64)], s_max: u32, s_limit: u32) -> NetworkTopology {
    let stations = points
        .iter()
        .map(|&p| StationConfig {
            location: Location::from(p),
            ..StationConfig::with_capacity(0, 8, 2.0, 3.0)
        })
        .collect();
    NetworkTopology::new(stations, s_max, s_limit).unwrap()
}

#[test]
fn zero_budget_gives_zero_slots() {
    let t = topology(&[(0.0, 0.0), (3.0, 4.0)], 0, 0);
    let r = allocate(&t, &[5.0, 2.0]).unwrap();
    assert_eq!(r.slots(), &[0, 0]);
}

#[test]
fn single_station_takes_what_it_needs() {
    let t = topology(&[(0.0, 0.0)], 39, 13);
    let rate = 2.6;
    let table = blocking_table(&t.stations[0], rate, 39).unwrap();
    let needed = table.iter().position(|b| *b < t.stations[0].qos_min).unwrap() as u32;
    let r = allocate(&t, &[rate]).unwrap();
    assert_eq!(r.slots(), &[needed.min(13)]);

    let busy = allocate(&t, &[200.0]).unwrap();
    assert_eq!(busy.slots(), &[13]);
    assert_eq!(busy.phase1.qos_shortfall, vec![0]);
}

#[test]
fn worked_redistribution() {
    let t = topology(&[(0.0, 0.0), (1.0, 0.0), (0.0, 2.0), (-2.0, 0.0)], 40, 13);
    let out = phase2_redistribute(&t, &[13, 0, 0, 0], &[(0, 6)]).unwrap();
    let grants: Vec<u32> = (1..4)
        .map(|k| out.grants.iter().filter(|g| g.recipient == k).map(|g| g.amount).sum())
        .collect();
    assert_eq!(grants, vec![4, 1, 1]);
}

#[test]
fn over_budget_is_infeasible() {
    assert!(compute_excess(&[10, 10], 15).is_err());
    assert_eq!(compute_excess(&[10, 3], 15).unwrap(), 2);
}

fn arb_network() -> impl Strategy<Value = (Vec<(f64, f64)>, Vec<f64>, u32, u32)> {
    (1usize..=4).prop_flat_map(|n| {
        (
            prop::collection::vec((0.0f64..30.0, 0.0f64..30.0), n),
            prop::collection::vec(0.1f64..30.0, n),
            0u32..=20,
            1u32..=10,
        )
            .prop_map(|(p, r, s_max, s_limit)| (p, r, s_max, s_limit.min(s_max)))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn allocation_respects_budget_and_cap((points, rates, s_max, s_limit) in arb_network()) {
        let t = topology(&points, s_max, s_limit);
        let r = allocate(&t, &rates).unwrap();
        prop_assert!(r.slots().iter().sum::<u32>() <= s_max);
        prop_assert!(r.slots().iter().all(|&s| s <= s_limit));
        let attributed: u32 = r.donors.iter().map(|d| d.1).sum();
        prop_assert_eq!(r.phase2.granted() + r.phase2.undistributed, attributed);
        prop_assert_eq!(attributed + r.unassigned, r.excess);
    }

    #[test]
    fn greedy_matches_exhaustive((points, rates, s_max, s_limit) in arb_network()) {
        let t = topology(&points, s_max, s_limit);
        let p1 = phase1_allocate(&t, &rates).unwrap();
        prop_assert_eq!(p1.verified, Some(true));
    }

    #[test]
    fn phase2_conserves_excess(
        (points, rates, _, s_limit) in arb_network(),
        excess in 0u32..30,
        start in prop::collection::vec(0u32..=10, 4),
    ) {
        let n = points.len();
        let t = topology(&points, 200, s_limit);
        let slots: Vec<u32> = start.iter().take(n).map(|s| (*s).min(s_limit)).collect();
        let out = phase2_redistribute(&t, &slots, &[(0, excess)]).unwrap();
        prop_assert_eq!(out.granted() + out.undistributed, excess);
        prop_assert!(out.slots.iter().all(|&s| s <= s_limit));
        let _ = rates;
    }

    #[test]
    fn weights_are_normalized(d in prop::collection::vec(0.01f64..50.0, 1..8)) {
        let w = redistribution_weights(&d);
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        for i in 0..d.len() {
            for j in 0..d.len() {
                if d[i] < d[j] {
                    prop_assert!(w[i] >= w[j]);
                }
            }
        }
    }
}

use evac_core::game::{ev_choose, ev_costs, ev_utility, leader_payoff, Decision, EvCustomer};
use evac_core::pricing::{acceptance_fraction, congestion_branch, congestion_price};
use evac_core::Location;
use proptest::prelude::*;

proptest! {
    #[test]
    fn price_monotone_in_load(thr in 0.5f64..30.0, a in 0.0f64..5.0, b in 0.0f64..5.0, theta in 0.0f64..2.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let p_lo = congestion_price(lo * thr, thr, 4.0, theta).unwrap();
        let p_hi = congestion_price(hi * thr, thr, 4.0, theta).unwrap();
        prop_assert!(p_lo <= p_hi);
        prop_assert!(p_lo >= 4.0);
        if theta > 0.0 && lo > 1.0 && hi > lo * (1.0 + 1e-9) {
            prop_assert!(p_lo < p_hi);
        }
    }

    #[test]
    fn price_monotone_in_theta(thr in 0.5f64..30.0, load in 1.0f64..5.0, t1 in 0.0f64..2.0, t2 in 0.0f64..2.0) {
        let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
        prop_assert!(congestion_price(load * thr, thr, 4.0, lo).unwrap() <= congestion_price(load * thr, thr, 4.0, hi).unwrap());
    }

    #[test]
    fn branches_meet_at_threshold(thr in 0.01f64..100.0, p in 0.5f64..10.0, theta in 0.0f64..3.0) {
        prop_assert!((congestion_branch(thr, thr, p, theta) - p).abs() <= 1e-12);
        prop_assert_eq!(congestion_price(thr, thr, p, theta).unwrap(), p);
    }

    #[test]
    fn acceptance_throttles_to_threshold(thr in 0.1f64..50.0, load in 0.0f64..200.0) {
        let f = acceptance_fraction(load, thr).unwrap();
        prop_assert!(f > 0.0 && f <= 1.0);
        prop_assert!(f * load <= thr + 1e-9);
    }

    #[test]
    fn scaling_costs_keeps_choice(
        prices in prop::collection::vec(1.0f64..10.0, 2..6),
        k in 0.1f64..10.0,
        seed_d in prop::collection::vec(0.0f64..20.0, 6),
    ) {
        let n = prices.len();
        let d: Vec<f64> = seed_d[..n].to_vec();
        let customer = EvCustomer::new(Location::new(0.0, 0.0), 0.0, 0.0, 0.03);
        let scaled = EvCustomer { drive_cost_rate: 0.03 * k, ..customer.clone() };
        let scaled_prices: Vec<f64> = prices.iter().map(|p| p * k).collect();
        let zeros = vec![0.0; n];
        let u1 = ev_utility(&customer, &zeros, &prices, &d, 0.05).unwrap();
        let u2 = ev_utility(&scaled, &zeros, &scaled_prices, &d, 0.05).unwrap();
        let argmin = |u: &[f64]| (0..u.len()).min_by(|&a, &b| u[a].total_cmp(&u[b])).unwrap();
        prop_assert_eq!(argmin(&u1), argmin(&u2));
    }

    #[test]
    fn incentive_gate_holds(
        prices in prop::collection::vec(4.0f64..8.0, 2..6),
        dists in prop::collection::vec(0.0f64..20.0, 6),
        blocking in prop::collection::vec(0.0f64..0.5, 6),
        c_inctv in 0.75f64..1.0,
        p_dis in 0.02f64..0.05,
        xi in 0.0f64..1.0,
    ) {
        let n = prices.len();
        let mut customer = EvCustomer::new(Location::new(0.0, 0.0), c_inctv, p_dis, 0.03);
        customer.urgency = xi;
        let d = &dists[..n];
        let b = &blocking[..n];
        let u = ev_utility(&customer, b, &prices, d, 0.05).unwrap();
        let costs = ev_costs(&customer, &prices, d).unwrap();
        let choice = ev_choose(&customer, &u, &costs, d, b, 0.05).unwrap();
        if let Decision::Routed { from, to } = choice.decision {
            prop_assert!(costs[from] - costs[to] >= c_inctv);
            prop_assert!(b[to] <= 0.05);
        }
    }

    #[test]
    fn payoff_matches_counts(served in prop::collection::vec(any::<bool>(), 1..30), price in 1.0f64..10.0) {
        let blocked: Vec<bool> = served.iter().map(|s| !s).collect();
        let prices = vec![price; served.len()];
        let s = served.iter().filter(|x| **x).count() as f64;
        let b = blocked.iter().filter(|x| **x).count() as f64;
        let got = leader_payoff(&prices, &served, &blocked, 6.0).unwrap();
        prop_assert!((got - (price * s - 6.0 * b)).abs() < 1e-9);
    }
}

#[test]
fn single_station_profit_curve_shape() {
    use evac_core::pricing::{expected_profit, StationCosts};
    let cfg = evac_core::scenario::paper_single_sine().stations[0].clone();
    let costs = StationCosts::default();
    let rates: Vec<f64> = (1..=80).map(|i| f64::from(i) * 0.25).collect();
    let profit: Vec<f64> = rates
        .iter()
        .map(|&l| expected_profit(&cfg, l, &costs).unwrap())
        .collect();
    for (l, p) in rates.iter().zip(&profit) {
        if *l <= 2.0 {
            assert!(*p < 0.0, "profit {p} at λ={l}");
        }
    }
    let peak = (0..profit.len())
        .max_by(|&a, &b| profit[a].total_cmp(&profit[b]))
        .unwrap();
    assert!(peak > 0 && peak < profit.len() - 1, "interior optimum");
    assert!(profit[..=peak].windows(2).all(|w| w[1] >= w[0]));
    assert!(profit[peak..].windows(2).all(|w| w[1] <= w[0]));
    assert!(profit[peak] > 0.0);
}

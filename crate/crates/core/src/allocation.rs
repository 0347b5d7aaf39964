//! Two-phase split of the grid-power budget across stations.
//!
//! Phase I grants integer grid slots to minimize the summed blocking
//! probability under a network budget `S^max` and a per-station draw cap
//! `S^limit`. Stations pinned at the cap would have taken more; the budget
//! they could not use is handed out in Phase II to the other stations in
//! proportion to inverse squared distance from the donor.

use std::cmp::Ordering;

use log::{debug, info, warn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::station::{blocking_probability, StationConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkTopology {
    pub stations: Vec<StationConfig>,
    /// Symmetric station-to-station distances with a zero diagonal.
    pub distances: Vec<Vec<f64>>,
    /// Network grid-power budget, in vehicle slots.
    pub s_max: u32,
    /// Per-station draw cap, in vehicle slots.
    pub s_limit: u32,
}

impl NetworkTopology {
    /// Topology with Euclidean distances between station locations.
    pub fn new(stations: Vec<StationConfig>, s_max: u32, s_limit: u32) -> Result<Self> {
        let distances = stations
            .iter()
            .map(|a| stations.iter().map(|b| a.location.distance(&b.location)).collect())
            .collect();
        Self::with_distances(stations, distances, s_max, s_limit)
    }

    pub fn with_distances(
        stations: Vec<StationConfig>,
        distances: Vec<Vec<f64>>,
        s_max: u32,
        s_limit: u32,
    ) -> Result<Self> {
        let topo = Self {
            stations,
            distances,
            s_max,
            s_limit,
        };
        topo.validate()?;
        Ok(topo)
    }

    pub fn len(&self) -> usize {
        self.stations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stations.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.stations.len();
        if n == 0 {
            return Err(Error::param("network has no stations"));
        }
        if self.s_limit > self.s_max {
            return Err(Error::param(format!(
                "s_limit ({}) exceeds s_max ({})",
                self.s_limit, self.s_max
            )));
        }
        if self.distances.len() != n || self.distances.iter().any(|row| row.len() != n) {
            return Err(Error::param(format!("distance matrix must be {n}x{n}")));
        }
        for i in 0..n {
            if self.distances[i][i] != 0.0 {
                return Err(Error::param(format!("distance from station {i} to itself must be 0")));
            }
            for j in 0..n {
                let d = self.distances[i][j];
                if !(d.is_finite() && d >= 0.0) || d != self.distances[j][i] {
                    return Err(Error::param(format!(
                        "distances must be finite, nonnegative and symmetric (d[{i}][{j}] = {d})"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Blocking probability of `cfg` for every slot count `0..=max_slots`.
pub fn blocking_table(cfg: &StationConfig, rate: f64, max_slots: u32) -> Result<Vec<f64>> {
    (0..=max_slots)
        .map(|s| {
            let mut c = cfg.clone();
            c.grid_slots = s;
            blocking_probability(&c, rate)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Phase1Result {
    /// Capped allocation.
    pub slots: Vec<u32>,
    /// Allocation the same rule produces with the per-station cap lifted.
    pub desired: Vec<u32>,
    /// Blocking probability at each station under `slots`.
    pub blocking: Vec<f64>,
    /// Summed blocking probability.
    pub objective: f64,
    /// Stations left above their QoS target with the cap binding.
    pub qos_shortfall: Vec<usize>,
    /// `Some(true)` when exhaustive search confirmed the greedy optimum.
    pub verified: Option<bool>,
}

/// Exhaustive verification runs only at desk scale.
const VERIFY_MAX_STATIONS: usize = 5;
const VERIFY_MAX_BUDGET: u32 = 40;

/// Like [`blocking_table`] but stops at the first slot count whose blocking
/// drops below `floor`; more slots than that are never granted.
fn blocking_table_until(cfg: &StationConfig, rate: f64, max_slots: u32, floor: f64) -> Result<Vec<f64>> {
    let mut table = Vec::new();
    for s in 0..=max_slots {
        let mut c = cfg.clone();
        c.grid_slots = s;
        let b = blocking_probability(&c, rate)?;
        table.push(b);
        if b < floor {
            break;
        }
    }
    Ok(table)
}

/// Largest useful slot count: the cap, or the first count whose blocking
/// drops below the station's lower QoS bound.
fn slot_ceilings(tables: &[Vec<f64>], cap: u32) -> Vec<u32> {
    tables.iter().map(|t| ((t.len() - 1) as u32).min(cap)).collect()
}

/// Greedy marginal allocation: one slot at a time to the station whose
/// blocking drops the most. Lowest index wins ties.
fn greedy(tables: &[Vec<f64>], ceilings: &[u32], budget: u32) -> Vec<u32> {
    let mut slots = vec![0u32; tables.len()];
    for _ in 0..budget {
        let mut best: Option<(usize, f64)> = None;
        for (i, table) in tables.iter().enumerate() {
            let s = slots[i] as usize;
            if slots[i] >= ceilings[i] {
                continue;
            }
            let gain = table[s] - table[s + 1];
            if best.is_none_or(|(_, g)| gain > g) {
                best = Some((i, gain));
            }
        }
        match best {
            Some((i, _)) => slots[i] += 1,
            None => break,
        }
    }
    slots
}

fn objective(tables: &[Vec<f64>], slots: &[u32]) -> f64 {
    tables.iter().zip(slots).map(|(t, &s)| t[s as usize]).sum()
}

/// Enumerates every vector with `slots[i] <= ceilings[i]` and total at most
/// `budget`, returning the minimizer (first found on ties).
pub(crate) fn exhaustive(tables: &[Vec<f64>], ceilings: &[u32], budget: u32) -> (Vec<u32>, f64) {
    fn walk(
        i: usize,
        left: u32,
        tables: &[Vec<f64>],
        ceilings: &[u32],
        current: &mut Vec<u32>,
        partial: f64,
        best: &mut (Vec<u32>, f64),
    ) {
        if i == tables.len() {
            if partial < best.1 {
                *best = (current.clone(), partial);
            }
            return;
        }
        for s in 0..=ceilings[i].min(left) {
            current.push(s);
            walk(
                i + 1,
                left - s,
                tables,
                ceilings,
                current,
                partial + tables[i][s as usize],
                best,
            );
            current.pop();
        }
    }
    let mut best = (Vec::new(), f64::INFINITY);
    walk(0, budget, tables, ceilings, &mut Vec::new(), 0.0, &mut best);
    best
}

fn check_rates(topology: &NetworkTopology, rates: &[f64]) -> Result<()> {
    if rates.len() != topology.len() {
        return Err(Error::param(format!(
            "{} arrival rates for {} stations",
            rates.len(),
            topology.len()
        )));
    }
    if let Some(r) = rates.iter().find(|r| !(r.is_finite() && **r > 0.0)) {
        return Err(Error::param(format!("arrival rates must be > 0, got {r}")));
    }
    Ok(())
}

/// Phase I: integer slots minimizing summed blocking under the budget and cap.
pub fn phase1_allocate(topology: &NetworkTopology, rates: &[f64]) -> Result<Phase1Result> {
    topology.validate()?;
    check_rates(topology, rates)?;

    let budget = topology.s_max;
    let cap = topology.s_limit;
    let tables = topology
        .stations
        .iter()
        .zip(rates)
        .map(|(cfg, &rate)| blocking_table_until(cfg, rate, budget, cfg.qos_min))
        .collect::<Result<Vec<_>>>()?;

    let ceilings = slot_ceilings(&tables, cap);
    let mut slots = greedy(&tables, &ceilings, budget);
    let mut best = objective(&tables, &slots);

    let verified = if topology.len() <= VERIFY_MAX_STATIONS && budget <= VERIFY_MAX_BUDGET {
        let (ex_slots, ex_best) = exhaustive(&tables, &ceilings, budget);
        if ex_best < best - 1e-12 {
            warn!("greedy allocation {slots:?} ({best}) beaten by exhaustive {ex_slots:?} ({ex_best})");
            slots = ex_slots;
            best = ex_best;
            Some(false)
        } else {
            Some(true)
        }
    } else {
        None
    };

    let desired = greedy(&tables, &slot_ceilings(&tables, budget), budget);
    let blocking: Vec<f64> = tables.iter().zip(&slots).map(|(t, &s)| t[s as usize]).collect();
    let qos_shortfall = (0..topology.len())
        .filter(|&i| slots[i] == cap && blocking[i] > topology.stations[i].qos_max)
        .collect::<Vec<_>>();
    if !qos_shortfall.is_empty() {
        info!("stations {qos_shortfall:?} miss their QoS target with the per-station cap binding");
    }
    debug!("phase I: slots {slots:?}, uncapped {desired:?}, objective {best}");

    Ok(Phase1Result {
        slots,
        desired,
        blocking,
        objective: best,
        qos_shortfall,
        verified,
    })
}

/// `S^excess = S^max − Σ S_i`.
pub fn compute_excess(slots: &[u32], s_max: u32) -> Result<u32> {
    let used: u64 = slots.iter().map(|&s| u64::from(s)).sum();
    u64::from(s_max)
        .checked_sub(used)
        .map(|e| e as u32)
        .ok_or_else(|| Error::Infeasible(format!("allocation uses {used} slots, budget is {s_max}")))
}

/// Splits `total` into integers proportional to `weights` by the largest
/// remainder method. `order_key` breaks remainder ties (smaller first).
fn largest_remainder(total: u32, weights: &[f64], order_key: &[f64]) -> Vec<u32> {
    let exact: Vec<f64> = weights.iter().map(|w| w * f64::from(total)).collect();
    let mut out: Vec<u32> = exact.iter().map(|e| e.floor() as u32).collect();
    let given: u32 = out.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.partial_cmp(&ra)
            .unwrap_or(Ordering::Equal)
            .then(order_key[a].partial_cmp(&order_key[b]).unwrap_or(Ordering::Equal))
            .then(a.cmp(&b))
    });
    for &i in order.iter().cycle().take(total.saturating_sub(given) as usize) {
        out[i] += 1;
    }
    out
}

/// Normalized inverse-square-distance weights `ω_k`. Recipients at zero
/// distance take the whole excess between them.
pub fn redistribution_weights(distances: &[f64]) -> Vec<f64> {
    if distances.contains(&0.0) {
        let zeros = distances.iter().filter(|&&d| d == 0.0).count() as f64;
        return distances
            .iter()
            .map(|&d| if d == 0.0 { 1.0 / zeros } else { 0.0 })
            .collect();
    }
    let inv: Vec<f64> = distances.iter().map(|d| 1.0 / (d * d)).collect();
    let total: f64 = inv.iter().sum();
    inv.iter().map(|v| v / total).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Grant {
    pub donor: usize,
    pub recipient: usize,
    pub amount: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Phase2Result {
    pub slots: Vec<u32>,
    pub grants: Vec<Grant>,
    /// Excess no recipient could absorb.
    pub undistributed: u32,
}

impl Phase2Result {
    pub fn granted(&self) -> u32 {
        self.grants.iter().map(|g| g.amount).sum()
    }
}

/// Phase II: hands each donor's excess to the non-donor stations in
/// proportion to inverse squared distance from the donor, respecting the cap.
///
/// Donors are processed in descending excess (lowest index on ties).
/// Integer shares come from the largest-remainder method so the amount
/// granted equals the excess exactly; shares clipped by the cap are
/// re-offered to the recipients that still have headroom.
pub fn phase2_redistribute(topology: &NetworkTopology, slots: &[u32], donors: &[(usize, u32)]) -> Result<Phase2Result> {
    topology.validate()?;
    let n = topology.len();
    if slots.len() != n {
        return Err(Error::param(format!("{} slot counts for {n} stations", slots.len())));
    }
    if let Some(&(d, _)) = donors.iter().find(|(d, _)| *d >= n) {
        return Err(Error::param(format!("donor index {d} out of range")));
    }

    let mut slots = slots.to_vec();
    let mut grants = Vec::new();
    let mut undistributed = 0u32;
    let is_donor = |k: usize| donors.iter().any(|&(d, _)| d == k);

    let mut order: Vec<(usize, u32)> = donors.to_vec();
    order.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));

    for (donor, excess) in order {
        let mut remaining = excess;
        while remaining > 0 {
            let eligible: Vec<usize> = (0..n)
                .filter(|&k| !is_donor(k) && slots[k] < topology.s_limit)
                .collect();
            if eligible.is_empty() {
                undistributed += remaining;
                break;
            }
            let dist: Vec<f64> = eligible.iter().map(|&k| topology.distances[k][donor]).collect();
            let shares = largest_remainder(remaining, &redistribution_weights(&dist), &dist);
            let mut clipped = 0;
            for (&k, &share) in eligible.iter().zip(&shares) {
                let amount = share.min(topology.s_limit - slots[k]);
                clipped += share - amount;
                if amount > 0 {
                    slots[k] += amount;
                    grants.push(Grant {
                        donor,
                        recipient: k,
                        amount,
                    });
                }
            }
            remaining = clipped;
        }
    }

    Ok(Phase2Result {
        slots,
        grants,
        undistributed,
    })
}

/// Splits the network excess among capped stations in proportion to how far
/// their uncapped allocation overshoots the cap. Excess beyond the total
/// overshoot is left unassigned.
pub fn attribute_excess(phase1: &Phase1Result, s_limit: u32, excess: u32) -> Vec<(usize, u32)> {
    let overshoot: Vec<(usize, u32)> = phase1
        .slots
        .iter()
        .zip(&phase1.desired)
        .enumerate()
        .filter(|(_, (&s, &d))| s == s_limit && d > s_limit)
        .map(|(i, (_, &d))| (i, d - s_limit))
        .collect();
    let total: u32 = overshoot.iter().map(|(_, o)| o).sum();
    if total == 0 {
        return Vec::new();
    }
    let assigned = excess.min(total);
    let weights: Vec<f64> = overshoot
        .iter()
        .map(|(_, o)| f64::from(*o) / f64::from(total))
        .collect();
    let index_key: Vec<f64> = overshoot.iter().map(|(i, _)| *i as f64).collect();
    overshoot
        .iter()
        .zip(largest_remainder(assigned, &weights, &index_key))
        .map(|(&(i, _), e)| (i, e))
        .collect()
}

/// Full Phase I + Phase II pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationReport {
    pub rates: Vec<f64>,
    pub phase1: Phase1Result,
    pub excess: u32,
    pub donors: Vec<(usize, u32)>,
    pub phase2: Phase2Result,
    /// Budget neither used in Phase I nor attributed to a donor.
    pub unassigned: u32,
    pub blocking_after: Vec<f64>,
}

impl AllocationReport {
    pub fn slots(&self) -> &[u32] {
        &self.phase2.slots
    }
}

pub fn allocate(topology: &NetworkTopology, rates: &[f64]) -> Result<AllocationReport> {
    let phase1 = phase1_allocate(topology, rates)?;
    let excess = compute_excess(&phase1.slots, topology.s_max)?;
    let donors = attribute_excess(&phase1, topology.s_limit, excess);
    let attributed: u32 = donors.iter().map(|(_, e)| e).sum();
    let phase2 = phase2_redistribute(topology, &phase1.slots, &donors)?;
    let blocking_after = topology
        .stations
        .iter()
        .zip(rates)
        .zip(&phase2.slots)
        .map(|((cfg, &rate), &s)| {
            let mut c = cfg.clone();
            c.grid_slots = s;
            blocking_probability(&c, rate)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(AllocationReport {
        rates: rates.to_vec(),
        excess,
        donors,
        unassigned: excess - attributed,
        phase1,
        phase2,
        blocking_after,
    })
}

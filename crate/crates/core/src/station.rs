//! Single-station loss model.
//!
//! A station draws a fixed amount of grid power, enough to charge `S` vehicles
//! at once, and keeps a local storage bank holding `R` full charges. The state
//! of the station is the pair `(n, j)`: `n` vehicles in service and `j` charged
//! storage units on hand.
//!
//! Transitions out of `(n, j)`:
//!
//! * arrival, rate `λ`: to `(n + 1, j)` while `n < S`; otherwise to
//!   `(n + 1, j - 1)` if `j > 0` (a storage unit is committed at admission);
//!   otherwise the arrival is lost.
//! * departure, rate `n·μ`: to `(n - 1, j)`, whatever the energy source.
//! * storage recharge, rate `ν`: to `(n, j + 1)` while `j < R` and `n < S`.
//!
//! With `R = 0` the chain is the Erlang loss system M/M/S/S.

use std::collections::{HashMap, VecDeque};

use log::warn;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::location::Location;

/// Physical and economic parameters of one charging station.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StationConfig {
    /// Vehicles that can be charged simultaneously from the grid (`S`).
    pub grid_slots: u32,
    /// Full vehicle charges held by local storage (`R`).
    pub storage_units: u32,
    /// Service completions per unit time for one vehicle (`μ`).
    pub charge_rate: f64,
    /// Storage-unit recharges per unit time (`ν`).
    pub storage_recharge_rate: f64,
    /// QoS target on the weighted blocking probability.
    pub qos_max: f64,
    /// Lower blocking bound below which capacity counts as over-provisioned.
    pub qos_min: f64,
    pub price_normal: f64,
    /// Penalty paid to each blocked customer.
    pub price_block_penalty: f64,
    /// Congestion-price tuning parameter.
    pub theta: f64,
    pub location: Location,
}

impl StationConfig {
    /// A station with the given capacity and default QoS and prices
    /// (`δ = 0.05`, `p_normal = 4`, `p_B = 5`, `θ = 0.5`).
    pub fn with_capacity(grid_slots: u32, storage_units: u32, charge_rate: f64, storage_recharge_rate: f64) -> Self {
        Self {
            grid_slots,
            storage_units,
            charge_rate,
            storage_recharge_rate,
            qos_max: 0.05,
            qos_min: 1e-4,
            price_normal: 4.0,
            price_block_penalty: 5.0,
            theta: 0.5,
            location: Location::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.charge_rate.is_finite() && self.charge_rate > 0.0) {
            return Err(Error::param(format!(
                "charge_rate must be > 0, got {}",
                self.charge_rate
            )));
        }
        if !(self.storage_recharge_rate.is_finite() && self.storage_recharge_rate > 0.0) {
            return Err(Error::param(format!(
                "storage_recharge_rate must be > 0, got {}",
                self.storage_recharge_rate
            )));
        }
        if !(self.qos_min > 0.0 && self.qos_min <= self.qos_max && self.qos_max < 1.0) {
            return Err(Error::param(format!(
                "need 0 < qos_min <= qos_max < 1, got qos_min={} qos_max={}",
                self.qos_min, self.qos_max
            )));
        }
        if !(self.price_normal.is_finite() && self.price_block_penalty > self.price_normal) {
            return Err(Error::param(format!(
                "block penalty ({}) must exceed the normal price ({})",
                self.price_block_penalty, self.price_normal
            )));
        }
        if !(self.theta.is_finite() && self.theta >= 0.0) {
            return Err(Error::param(format!("theta must be >= 0, got {}", self.theta)));
        }
        if self.grid_slots == 0 && self.storage_units > 0 {
            warn!(
                "station with no grid slots and {} storage units can never recharge its storage",
                self.storage_units
            );
        }
        Ok(())
    }

    fn check_rates(&self, arrival_rate: f64) -> Result<()> {
        if !(arrival_rate.is_finite() && arrival_rate > 0.0) {
            return Err(Error::param(format!("arrival rate must be > 0, got {arrival_rate}")));
        }
        if !(self.charge_rate.is_finite() && self.charge_rate > 0.0) {
            return Err(Error::param(format!(
                "charge_rate must be > 0, got {}",
                self.charge_rate
            )));
        }
        if !(self.storage_recharge_rate.is_finite() && self.storage_recharge_rate > 0.0) {
            return Err(Error::param(format!(
                "storage_recharge_rate must be > 0, got {}",
                self.storage_recharge_rate
            )));
        }
        Ok(())
    }
}

/// `(n, j)`: vehicles in service and charged storage units available.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct StationState {
    pub in_service: u32,
    pub storage: u32,
}

impl StationState {
    pub const fn new(in_service: u32, storage: u32) -> Self {
        Self { in_service, storage }
    }
}

/// Outgoing transitions of one state, with their rates.
pub(crate) fn transitions(
    state: StationState,
    grid_slots: u32,
    storage_units: u32,
    arrival_rate: f64,
    charge_rate: f64,
    recharge_rate: f64,
) -> impl Iterator<Item = (StationState, f64)> {
    let StationState {
        in_service: n,
        storage: j,
    } = state;
    let arrival = if n < grid_slots {
        Some((StationState::new(n + 1, j), arrival_rate))
    } else if j > 0 {
        Some((StationState::new(n + 1, j - 1), arrival_rate))
    } else {
        None
    };
    let departure = (n > 0).then(|| (StationState::new(n - 1, j), f64::from(n) * charge_rate));
    let recharge = (j < storage_units && n < grid_slots).then(|| (StationState::new(n, j + 1), recharge_rate));
    arrival.into_iter().chain(departure).chain(recharge)
}

/// The finite CTMC of one station at a fixed arrival rate.
#[derive(Debug, Clone)]
pub struct MarkovModel {
    grid_slots: u32,
    storage_units: u32,
    arrival_rate: f64,
    states: Vec<StationState>,
    index: HashMap<StationState, usize>,
    generator: DMatrix<f64>,
    stationary: Option<Vec<f64>>,
}

impl MarkovModel {
    pub fn states(&self) -> &[StationState] {
        &self.states
    }

    pub fn state_index(&self, state: StationState) -> Option<usize> {
        self.index.get(&state).copied()
    }

    pub fn generator(&self) -> &DMatrix<f64> {
        &self.generator
    }

    pub fn arrival_rate(&self) -> f64 {
        self.arrival_rate
    }

    pub fn grid_slots(&self) -> u32 {
        self.grid_slots
    }

    pub fn storage_units(&self) -> u32 {
        self.storage_units
    }

    /// True when an arrival in `state` would be lost.
    pub fn is_blocking(&self, state: StationState) -> bool {
        state.in_service >= self.grid_slots && state.storage == 0
    }

    /// Stationary distribution, if [`MarkovModel::solve`] has run.
    pub fn stationary(&self) -> Option<&[f64]> {
        self.stationary.as_deref()
    }

    /// Solves `πQ = 0, Σπ = 1` by a dense LU solve with the last balance
    /// equation replaced by the normalization row.
    pub fn stationary_distribution(&self) -> Result<Vec<f64>> {
        let size = self.states.len();
        let mut system = self.generator.transpose();
        for col in 0..size {
            system[(size - 1, col)] = 1.0;
        }
        let mut rhs = DVector::zeros(size);
        rhs[size - 1] = 1.0;

        let pi = system.lu().solve(&rhs).ok_or_else(|| Error::Singular {
            states: size,
            detail: "reachable class is not a single recurrent class".into(),
        })?;
        if pi.iter().any(|p| !p.is_finite()) {
            return Err(Error::Singular {
                states: size,
                detail: "non-finite solution".into(),
            });
        }
        // Round-off can leave entries a few ulps below zero.
        let mut pi: Vec<f64> = pi.iter().map(|&p| p.max(0.0)).collect();
        let total: f64 = pi.iter().sum();
        pi.iter_mut().for_each(|p| *p /= total);
        Ok(pi)
    }

    /// Solves and caches the stationary distribution.
    pub fn solve(mut self) -> Result<Self> {
        self.stationary = Some(self.stationary_distribution()?);
        Ok(self)
    }

    /// Probability mass on states where arrivals are lost. By PASTA this is
    /// the long-run fraction of blocked arrivals.
    pub fn blocking_probability(&self) -> Result<f64> {
        let owned;
        let pi = match &self.stationary {
            Some(pi) => pi.as_slice(),
            None => {
                owned = self.stationary_distribution()?;
                owned.as_slice()
            }
        };
        Ok(self
            .states
            .iter()
            .zip(pi)
            .filter(|(s, _)| self.is_blocking(**s))
            .map(|(_, p)| p)
            .sum())
    }

    /// `‖πQ‖∞` for a candidate distribution.
    pub fn balance_residual(&self, pi: &[f64]) -> f64 {
        let row = DVector::from_column_slice(pi).transpose() * &self.generator;
        row.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
    }
}

/// Builds the generator over the states reachable from `(0, R)`.
pub fn build_generator(cfg: &StationConfig, arrival_rate: f64) -> Result<MarkovModel> {
    cfg.check_rates(arrival_rate)?;
    let (s, r) = (cfg.grid_slots, cfg.storage_units);
    let (mu, nu) = (cfg.charge_rate, cfg.storage_recharge_rate);

    let start = StationState::new(0, r);
    let mut states = vec![start];
    let mut index = HashMap::from([(start, 0usize)]);
    let mut queue = VecDeque::from([start]);
    while let Some(state) = queue.pop_front() {
        for (next, _) in transitions(state, s, r, arrival_rate, mu, nu) {
            if let std::collections::hash_map::Entry::Vacant(slot) = index.entry(next) {
                slot.insert(states.len());
                states.push(next);
                queue.push_back(next);
            }
        }
    }

    let size = states.len();
    let mut generator = DMatrix::zeros(size, size);
    for (from, &state) in states.iter().enumerate() {
        let mut out = 0.0;
        for (next, rate) in transitions(state, s, r, arrival_rate, mu, nu) {
            generator[(from, index[&next])] += rate;
            out += rate;
        }
        generator[(from, from)] = -out;
    }

    Ok(MarkovModel {
        grid_slots: s,
        storage_units: r,
        arrival_rate,
        states,
        index,
        generator,
        stationary: None,
    })
}

/// Stationary distribution of a built model.
pub fn stationary_distribution(model: &MarkovModel) -> Result<Vec<f64>> {
    model.stationary_distribution()
}

/// Long-run blocking probability of a station offered Poisson traffic at
/// `arrival_rate`.
pub fn blocking_probability(cfg: &StationConfig, arrival_rate: f64) -> Result<f64> {
    build_generator(cfg, arrival_rate)?.blocking_probability()
}

/// Relative importance of blocking a local customer versus a routed one.
/// Routed customers weigh more.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockingWeights {
    pub local: f64,
    pub routed: f64,
}

impl Default for BlockingWeights {
    fn default() -> Self {
        Self {
            local: 0.45,
            routed: 0.55,
        }
    }
}

impl BlockingWeights {
    pub fn new(local: f64, routed: f64) -> Result<Self> {
        let w = Self { local, routed };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.local >= 0.0 && self.routed >= 0.0) {
            return Err(Error::param("blocking weights must be nonnegative"));
        }
        if (self.local + self.routed - 1.0).abs() > 1e-12 {
            return Err(Error::param(format!(
                "blocking weights must sum to 1, got {} + {}",
                self.local, self.routed
            )));
        }
        if self.routed <= self.local {
            return Err(Error::param(format!(
                "routed weight ({}) must exceed local weight ({})",
                self.routed, self.local
            )));
        }
        Ok(())
    }
}

/// `P_BT = γ1·B_EV + γ2·B_RB`.
pub fn weighted_blocking(local_blocking: f64, routed_blocking: f64, weights: BlockingWeights) -> Result<f64> {
    weights.validate()?;
    Ok(weights.local * local_blocking + weights.routed * routed_blocking)
}

/// Absolute tolerance of the admissible-rate bisection.
pub const ADMISSIBLE_RATE_TOL: f64 = 1e-3;

/// Upper-bound doublings before the threshold is declared non-binding.
pub const ADMISSIBLE_RATE_MAX_DOUBLINGS: u32 = 24;

/// Initial bracket `(S + R)·μ`, or `μ` for an empty station.
fn initial_upper_rate(cfg: &StationConfig) -> f64 {
    let capacity = f64::from(cfg.grid_slots + cfg.storage_units);
    capacity.max(1.0) * cfg.charge_rate
}

/// The rate returned when the QoS target never binds: the initial bracket
/// doubled [`ADMISSIBLE_RATE_MAX_DOUBLINGS`] times.
pub fn admissible_rate_cap(cfg: &StationConfig) -> f64 {
    initial_upper_rate(cfg) * 2f64.powi(ADMISSIBLE_RATE_MAX_DOUBLINGS as i32)
}

/// Largest arrival rate whose blocking stays within `qos_max`.
///
/// Both blocking classes are taken equal to the chain's blocking probability,
/// so the weighted metric reduces to `B(λ)`. Bisection to
/// [`ADMISSIBLE_RATE_TOL`], returning the feasible end of the final bracket.
pub fn max_admissible_rate(cfg: &StationConfig) -> Result<f64> {
    max_admissible_rate_for(cfg, cfg.qos_max)
}

/// [`max_admissible_rate`] against an explicit target in `(0, 1]`.
pub fn max_admissible_rate_for(cfg: &StationConfig, target: f64) -> Result<f64> {
    if !(target > 0.0 && target <= 1.0) {
        return Err(Error::param(format!("QoS target must be in (0, 1], got {target}")));
    }
    let blocking = |rate: f64| blocking_probability(cfg, rate);

    // B → 0 as λ → 0 unless the station has no grid power at all.
    let probe = ADMISSIBLE_RATE_TOL.min(cfg.charge_rate * 1e-6);
    if blocking(probe)? > target {
        return Err(Error::Infeasible(format!(
            "blocking exceeds the QoS target {target} even at vanishing load (S={}, R={})",
            cfg.grid_slots, cfg.storage_units
        )));
    }

    let mut hi = initial_upper_rate(cfg);
    let mut doublings = 0;
    while blocking(hi)? <= target {
        if doublings == ADMISSIBLE_RATE_MAX_DOUBLINGS {
            return Ok(hi);
        }
        hi *= 2.0;
        doublings += 1;
    }
    let mut lo = 0.0;
    while hi - lo > ADMISSIBLE_RATE_TOL {
        let mid = 0.5 * (lo + hi);
        if blocking(mid)? <= target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(s: u32, r: u32, mu: f64, nu: f64) -> StationConfig {
        StationConfig::with_capacity(s, r, mu, nu)
    }

    #[test]
    fn single_server_is_two_state() {
        let m = build_generator(&cfg(1, 0, 3.0, 1.0), 1.7).unwrap();
        let mut states = m.states().to_vec();
        states.sort();
        assert_eq!(states, vec![StationState::new(0, 0), StationState::new(1, 0)]);
    }

    #[test]
    fn generator_rows_sum_to_zero() {
        let m = build_generator(&cfg(5, 5, 2.0, 4.0), 5.0).unwrap();
        let q = m.generator();
        for i in 0..q.nrows() {
            let sum: f64 = q.row(i).iter().sum();
            assert!(sum.abs() <= 1e-12, "row {i} sums to {sum}");
            for j in 0..q.ncols() {
                if i != j {
                    assert!(q[(i, j)] >= 0.0);
                }
            }
        }
    }

    #[test]
    fn symmetric_two_state_chain() {
        let m = build_generator(&cfg(1, 0, 2.0, 1.0), 2.0).unwrap();
        let pi = m.stationary_distribution().unwrap();
        assert!((pi[0] - 0.5).abs() < 1e-12 && (pi[1] - 0.5).abs() < 1e-12);
        assert!((blocking_probability(&cfg(1, 0, 2.0, 1.0), 2.0).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn busy_probability_two_thirds() {
        let m = build_generator(&cfg(1, 0, 1.5, 1.0), 3.0).unwrap();
        let pi = m.stationary_distribution().unwrap();
        let busy = pi[m.state_index(StationState::new(1, 0)).unwrap()];
        assert!((busy - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_rates() {
        assert!(matches!(
            build_generator(&cfg(2, 1, 1.0, 1.0), 0.0),
            Err(Error::Parameter(_))
        ));
        assert!(matches!(
            build_generator(&cfg(2, 1, 1.0, 1.0), -1.0),
            Err(Error::Parameter(_))
        ));
        assert!(matches!(
            build_generator(&cfg(2, 1, 0.0, 1.0), 1.0),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn weights_are_checked() {
        assert!(BlockingWeights::new(0.5, 0.5).is_err());
        assert!(BlockingWeights::new(0.6, 0.4).is_err());
        assert!(BlockingWeights::new(0.4, 0.5).is_err());
        let w = BlockingWeights::new(0.45, 0.55).unwrap();
        assert!((weighted_blocking(0.2, 0.0, w).unwrap() - 0.09).abs() < 1e-15);
        assert!((weighted_blocking(0.3, 0.3, w).unwrap() - 0.3).abs() < 1e-15);
        assert!((weighted_blocking(0.0, 1.0, w).unwrap() - 0.55).abs() < 1e-15);
    }

    #[test]
    fn admissible_rate_single_server_half() {
        // B(1, a) = a / (1 + a) = 1/2 at a = 1.
        let mut c = cfg(1, 0, 1.0, 1.0);
        c.qos_max = 0.5;
        let rate = max_admissible_rate(&c).unwrap();
        assert!((rate - 1.0).abs() <= ADMISSIBLE_RATE_TOL, "{rate}");
    }

    #[test]
    fn vacuous_target_returns_cap() {
        let c = cfg(2, 1, 1.0, 1.0);
        let rate = max_admissible_rate_for(&c, 1.0).unwrap();
        assert_eq!(rate, admissible_rate_cap(&c));
    }

    #[test]
    fn no_grid_power_is_infeasible() {
        let c = cfg(0, 3, 2.0, 3.0);
        assert!(matches!(max_admissible_rate(&c), Err(Error::Infeasible(_))));
        // Storage drains and never refills.
        assert!((blocking_probability(&c, 1.0).unwrap() - 1.0).abs() < 1e-12);
    }
}

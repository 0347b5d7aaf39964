//! Leader–follower routing game.
//!
//! The network operator (leader) commits to per-station prices through the
//! congestion-pricing parameter θ. Each EV (follower) then ranks stations by a
//! cost utility and either accepts a detour to a cheaper station or stays at
//! its nearest one.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::location::Location;
use crate::pricing::PriceSignal;
use crate::scenario::{NetworkScenario, ScenarioTier};
use crate::sim::run_simulation;

/// One charging request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvCustomer {
    pub location: Location,
    /// Minimum saving that makes a detour worthwhile.
    pub incentive_threshold: f64,
    /// Dissatisfaction per extra unit of distance driven.
    pub dissatisfaction_rate: f64,
    /// Driving cost coefficient on squared distance.
    pub drive_cost_rate: f64,
    /// Sensitivity to blocking (`ξ`); zero unless the nearest station is congested.
    pub urgency: f64,
    pub decision: Option<Decision>,
}

impl EvCustomer {
    pub fn new(location: Location, incentive_threshold: f64, dissatisfaction_rate: f64, drive_cost_rate: f64) -> Self {
        Self {
            location,
            incentive_threshold,
            dissatisfaction_rate,
            drive_cost_rate,
            urgency: 0.0,
            decision: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let vals = [
            self.incentive_threshold,
            self.dissatisfaction_rate,
            self.drive_cost_rate,
            self.urgency,
        ];
        if vals.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::param("customer parameters must be finite and nonnegative"));
        }
        Ok(())
    }

    pub fn distances(&self, stations: &[Location]) -> Vec<f64> {
        stations.iter().map(|s| self.location.distance(s)).collect()
    }
}

/// Station a customer settles on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Decision {
    /// Stays with the nearest station (routing offer rejected or not made).
    Nearest(usize),
    /// Accepts a detour.
    Routed { from: usize, to: usize },
}

impl Decision {
    pub fn station(&self) -> usize {
        match *self {
            Decision::Nearest(s) => s,
            Decision::Routed { to, .. } => to,
        }
    }

    pub fn is_routed(&self) -> bool {
        matches!(self, Decision::Routed { .. })
    }
}

fn nearest_of(distances: &[f64]) -> usize {
    let mut best = 0;
    for (i, &d) in distances.iter().enumerate() {
        if d < distances[best] {
            best = i;
        }
    }
    best
}

fn check_lengths(lens: &[usize]) -> Result<()> {
    if lens.is_empty() || lens.iter().any(|&l| l != lens[0]) || lens[0] == 0 {
        return Err(Error::param(format!(
            "per-station vectors must be nonempty and of equal length, got {lens:?}"
        )));
    }
    Ok(())
}

/// Money cost of using each station, before the blocking disutility:
/// `p_n + p_drive·d_n² + p_dis·(d_n − d_nearest)`.
pub fn ev_costs(customer: &EvCustomer, prices: &[f64], distances: &[f64]) -> Result<Vec<f64>> {
    check_lengths(&[prices.len(), distances.len()])?;
    if distances.iter().any(|d| !(d.is_finite() && *d >= 0.0)) {
        return Err(Error::param("distances must be finite and nonnegative"));
    }
    let d_near = distances.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(prices
        .iter()
        .zip(distances)
        .map(|(p, d)| p + customer.drive_cost_rate * d * d + customer.dissatisfaction_rate * (d - d_near))
        .collect())
}

/// Utility (a cost, lower is better) of each station:
/// `exp(ξ·(P_BT,n − δ)) · [p_n + p_drive·d_n² + p_dis·(d_n − d_nearest)]`.
pub fn ev_utility(
    customer: &EvCustomer,
    blocking: &[f64],
    prices: &[f64],
    distances: &[f64],
    qos_target: f64,
) -> Result<Vec<f64>> {
    check_lengths(&[blocking.len(), prices.len(), distances.len()])?;
    Ok(ev_costs(customer, prices, distances)?
        .into_iter()
        .zip(blocking)
        .map(|(cost, b)| (customer.urgency * (b - qos_target)).exp() * cost)
        .collect())
}

/// Lowest-utility station. Among equal utilities the closer station wins,
/// then the lower index.
pub fn preferred_station(utilities: &[f64], distances: &[f64]) -> usize {
    let mut best = 0;
    for i in 1..utilities.len() {
        let better =
            utilities[i] < utilities[best] || (utilities[i] == utilities[best] && distances[i] < distances[best]);
        if better {
            best = i;
        }
    }
    best
}

/// Outcome of the follower's decision rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Choice {
    pub decision: Decision,
    /// Station the utility ranking preferred.
    pub candidate: usize,
    /// `cost_nearest − cost_candidate`.
    pub savings: f64,
}

/// Accept a detour to the preferred station only if it saves at least the
/// customer's incentive threshold and its blocking estimate is within the QoS
/// target; otherwise stay with the nearest station.
pub fn ev_choose(
    customer: &EvCustomer,
    utilities: &[f64],
    costs: &[f64],
    distances: &[f64],
    blocking: &[f64],
    qos_max: f64,
) -> Result<Choice> {
    check_lengths(&[utilities.len(), costs.len(), distances.len(), blocking.len()])?;
    let nearest = nearest_of(distances);
    let candidate = preferred_station(utilities, distances);
    let savings = costs[nearest] - costs[candidate];
    let accept = candidate != nearest && savings >= customer.incentive_threshold && blocking[candidate] <= qos_max;
    let decision = if accept {
        Decision::Routed {
            from: nearest,
            to: candidate,
        }
    } else {
        Decision::Nearest(nearest)
    };
    Ok(Choice {
        decision,
        candidate,
        savings,
    })
}

/// `Σ p_k·q_k − p_B·Σ q_B,k`: prices paid by served customers minus the
/// blocking penalty.
pub fn leader_payoff(prices: &[f64], served: &[bool], blocked: &[bool], block_penalty: f64) -> Result<f64> {
    check_lengths(&[prices.len(), served.len(), blocked.len()])?;
    if served.iter().zip(blocked).any(|(s, b)| *s && *b) {
        return Err(Error::param("a customer cannot be both served and blocked"));
    }
    let income: f64 = prices.iter().zip(served).filter(|(_, s)| **s).map(|(p, _)| p).sum();
    let penalty = block_penalty * blocked.iter().filter(|b| **b).count() as f64;
    Ok(income - penalty)
}

/// How one control step ended.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum StepResult {
    Served {
        price: f64,
    },
    Blocked {
        penalty: f64,
    },
    /// Rejected the quoted price and left.
    Balked,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub nearest: usize,
    pub decision: Decision,
    pub result: StepResult,
}

impl StepRecord {
    pub fn station(&self) -> usize {
        self.decision.station()
    }

    pub fn revenue(&self) -> f64 {
        match self.result {
            StepResult::Served { price } => price,
            StepResult::Blocked { penalty } => -penalty,
            StepResult::Balked => 0.0,
        }
    }
}

/// Tries to put a customer into service at a station.
pub trait Admission {
    /// Returns `false` when the station is full.
    fn admit(&mut self, station: usize) -> bool;
}

/// What the leader broadcasts to an arriving customer.
#[derive(Debug, Clone, Copy)]
pub struct NetworkView<'a> {
    pub locations: &'a [Location],
    pub signals: &'a [PriceSignal],
    /// Fraction of local customers accepting each station's quote.
    pub acceptance: &'a [f64],
    /// Blocking estimate per station.
    pub blocking: &'a [f64],
    pub qos_max: &'a [f64],
    pub price_normal: &'a [f64],
    pub block_penalty: &'a [f64],
    /// `ξ` applied when the customer's nearest station is congested.
    pub urgency: f64,
    /// Offer detours at all.
    pub routing: bool,
}

impl NetworkView<'_> {
    pub fn len(&self) -> usize {
        self.locations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.locations.is_empty()
    }

    fn validate(&self) -> Result<()> {
        check_lengths(&[
            self.locations.len(),
            self.signals.len(),
            self.acceptance.len(),
            self.blocking.len(),
            self.qos_max.len(),
            self.price_normal.len(),
            self.block_penalty.len(),
        ])
    }
}

/// One pass of the control loop for a single customer: quote prices, rank
/// stations, pick one, attempt admission and settle the payment.
///
/// `accept_draw` is a uniform `[0, 1)` variate deciding whether the customer
/// accepts a congestion price at its nearest station; customers who refuse
/// leave without service.
pub fn decentralized_control_step<A: Admission + ?Sized>(
    customer: &mut EvCustomer,
    view: &NetworkView<'_>,
    admission: &mut A,
    accept_draw: f64,
) -> Result<StepRecord> {
    view.validate()?;
    let distances = customer.distances(view.locations);
    let nearest = nearest_of(&distances);
    let prices: Vec<f64> = view.signals.iter().map(|s| s.price).collect();

    let decision = if view.routing {
        customer.urgency = if view.signals[nearest].congested {
            view.urgency
        } else {
            0.0
        };
        let utilities = ev_utility(customer, view.blocking, &prices, &distances, view.qos_max[nearest])?;
        let costs = ev_costs(customer, &prices, &distances)?;
        ev_choose(
            customer,
            &utilities,
            &costs,
            &distances,
            view.blocking,
            view.qos_max[nearest],
        )?
        .decision
    } else {
        customer.urgency = 0.0;
        Decision::Nearest(nearest)
    };
    customer.decision = Some(decision);

    let station = decision.station();
    let price = prices[station];
    let local_quote_refused =
        !decision.is_routed() && price > view.price_normal[station] && accept_draw >= view.acceptance[station];
    let result = if local_quote_refused {
        StepResult::Balked
    } else if admission.admit(station) {
        StepResult::Served { price }
    } else {
        StepResult::Blocked {
            penalty: view.block_penalty[station],
        }
    };
    Ok(StepRecord {
        nearest,
        decision,
        result,
    })
}

/// Accumulated outcome of a sequence of control steps.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GameOutcome {
    pub choices: Vec<usize>,
    pub served: Vec<bool>,
    pub blocked: Vec<bool>,
    pub prices: Vec<f64>,
    pub penalties: Vec<f64>,
    pub served_per_station: Vec<u64>,
    pub blocked_per_station: Vec<u64>,
    pub balked_per_station: Vec<u64>,
    pub revenue: f64,
}

impl GameOutcome {
    pub fn new(stations: usize) -> Self {
        Self {
            served_per_station: vec![0; stations],
            blocked_per_station: vec![0; stations],
            balked_per_station: vec![0; stations],
            ..Self::default()
        }
    }

    pub fn record(&mut self, step: &StepRecord) {
        let station = step.station();
        self.choices.push(station);
        let (served, blocked, price, penalty) = match step.result {
            StepResult::Served { price } => {
                self.served_per_station[station] += 1;
                (true, false, price, 0.0)
            }
            StepResult::Blocked { penalty } => {
                self.blocked_per_station[station] += 1;
                (false, true, 0.0, penalty)
            }
            StepResult::Balked => {
                self.balked_per_station[station] += 1;
                (false, false, 0.0, 0.0)
            }
        };
        self.served.push(served);
        self.blocked.push(blocked);
        self.prices.push(price);
        self.penalties.push(penalty);
        self.revenue += step.revenue();
    }

    pub fn customers(&self) -> usize {
        self.choices.len()
    }
}

/// What θ tuning optimizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TuningMode {
    /// Highest leader payoff.
    #[default]
    MaxPayoff,
    /// Lowest worst-case blocking among tuned stations, without losing payoff
    /// relative to the smallest θ on the grid.
    MinBlocking,
}

/// One grid point of a θ sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThetaPoint {
    pub theta: f64,
    pub p_bt: Vec<f64>,
    pub revenue: f64,
    pub routed_out: Vec<f64>,
    pub balked: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThetaTuning {
    /// θ per station with the tuned ones set to `best`.
    pub theta: Vec<f64>,
    pub best: f64,
    pub tuned_stations: Vec<usize>,
    pub curve: Vec<ThetaPoint>,
}

/// Grid search over a common θ for the scenario's tuned stations (all
/// stations when none are listed). Every candidate runs the full-control tier
/// on the same seed, so candidates see the same customers.
pub fn tune_theta(scenario: &NetworkScenario, grid: &[f64], mode: TuningMode) -> Result<ThetaTuning> {
    if grid.is_empty() {
        return Err(Error::param("theta grid is empty"));
    }
    if let Some(bad) = grid.iter().find(|t| !(t.is_finite() && **t >= 0.0)) {
        return Err(Error::param(format!("theta must be finite and >= 0, got {bad}")));
    }
    let tuned: Vec<usize> = if scenario.game.tuned_stations.is_empty() {
        (0..scenario.stations.len()).collect()
    } else {
        scenario.game.tuned_stations.clone()
    };
    let run = &scenario.run;
    let mut curve = Vec::with_capacity(grid.len());
    for &theta in grid {
        let mut s = scenario.clone();
        for &i in &tuned {
            s.stations[i].theta = theta;
        }
        let m = run_simulation(&s, ScenarioTier::FullControl, run.seed, run.horizon, run.replications)?;
        let range = m.windows_between(run.warmup, run.horizon);
        let reps = m.replications.len() as f64;
        let pooled = m.pooled_totals(range.clone());
        curve.push(ThetaPoint {
            theta,
            p_bt: m.p_bt(range.clone()).iter().map(|e| e.mean).collect(),
            revenue: m.revenue(range).mean,
            routed_out: pooled.iter().map(|t| t.routed_out as f64 / reps).collect(),
            balked: pooled.iter().map(|t| t.balked as f64 / reps).collect(),
        });
    }

    // Ties go to the smaller θ.
    let better = |a: (f64, f64), b: (f64, f64)| a.0 < b.0 || (a.0 == b.0 && a.1 < b.1);
    let worst_tuned = |p: &ThetaPoint| tuned.iter().map(|&i| p.p_bt[i]).fold(0.0, f64::max);
    let floor = curve
        .iter()
        .min_by(|a, b| a.theta.total_cmp(&b.theta))
        .map(|p| p.revenue)
        .unwrap_or(f64::NEG_INFINITY);
    let mut best: Option<(f64, f64)> = None;
    for p in &curve {
        let key = match mode {
            TuningMode::MaxPayoff => (-p.revenue, p.theta),
            TuningMode::MinBlocking if p.revenue >= floor => (worst_tuned(p), p.theta),
            TuningMode::MinBlocking => continue,
        };
        if best.is_none_or(|b| better(key, b)) {
            best = Some(key);
        }
    }
    let best = best.map(|b| b.1).expect("the smallest grid point always qualifies");
    let mut theta: Vec<f64> = scenario.stations.iter().map(|s| s.theta).collect();
    for &i in &tuned {
        theta[i] = best;
    }
    Ok(ThetaTuning {
        theta,
        best,
        tuned_stations: tuned,
        curve,
    })
}

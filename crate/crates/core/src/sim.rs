//! Discrete-event simulation of the station network.
//!
//! Each replication is a single-threaded event loop. Replications run in
//! parallel on independent random streams derived from `(seed, index)`, so
//! results do not depend on scheduling. Within a replication, fresh arrivals
//! draw from their own stream, which keeps the customer sequence identical
//! across tiers (common random numbers).

use std::cmp::{Ordering, Reverse};
use std::collections::{BinaryHeap, HashMap};
use std::ops::Range;
use std::sync::Mutex;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::allocation::{allocate, AllocationReport};
use crate::demand::{nearest_station, station_rates_at, station_shares, SpatialSampler};
use crate::error::{Error, Result};
use crate::game::{decentralized_control_step, Admission, EvCustomer, NetworkView, StepResult};
use crate::location::Location;
use crate::pricing::{acceptance_fraction, PriceSignal};
use crate::scenario::{Assignment, BlockingEstimator, NetworkScenario};
use crate::station::{blocking_probability, max_admissible_rate, BlockingWeights, StationConfig};

pub use crate::scenario::ScenarioTier;

/// Samples used to estimate station shares under spatial assignment.
const SHARE_SAMPLES: usize = 100_000;

/// Offered loads are rounded to this step before the chain is solved.
const LOAD_QUANTUM: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Departure,
    StorageRecharge,
    RateWindowTick,
    Retry,
    Arrival,
}

/// A blocked customer coming back.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryTicket {
    pub station: usize,
    pub routed: bool,
    /// Unit-rate exponential service requirement.
    pub service: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Payload {
    None,
    Station(usize),
    Recharge { station: usize, token: u64 },
    Retry(RetryTicket),
    Window(usize),
}

#[derive(Debug, Clone, Copy)]
pub struct SimEvent {
    pub time: f64,
    pub kind: EventKind,
    pub seq: u64,
    pub payload: Payload,
}

impl Ord for SimEvent {
    fn cmp(&self, other: &Self) -> Ordering {
        self.time
            .total_cmp(&other.time)
            .then(self.kind.cmp(&other.kind))
            .then(self.seq.cmp(&other.seq))
    }
}

impl PartialOrd for SimEvent {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl PartialEq for SimEvent {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for SimEvent {}

/// Pending events, earliest first.
#[derive(Debug, Default)]
pub struct EventQueue {
    heap: BinaryHeap<Reverse<SimEvent>>,
    seq: u64,
}

impl EventQueue {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, time: f64, kind: EventKind, payload: Payload) {
        self.seq += 1;
        self.heap.push(Reverse(SimEvent {
            time,
            kind,
            seq: self.seq,
            payload,
        }));
    }

    pub fn pop(&mut self) -> Option<SimEvent> {
        self.heap.pop().map(|Reverse(e)| e)
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }
}

/// Counts for one station over one estimation window.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct WindowStats {
    /// Fresh requests for which this is the nearest station.
    pub fresh: u64,
    pub retry_local: u64,
    pub retry_routed: u64,
    pub routed_in: u64,
    pub routed_out: u64,
    pub attempts_local: u64,
    pub attempts_routed: u64,
    pub served: u64,
    pub blocked_local: u64,
    pub blocked_routed: u64,
    pub balked: u64,
    pub revenue: f64,
    /// Quote in force during the window.
    pub price: f64,
    pub congested: bool,
    /// `λ̃` estimate the quote was based on.
    pub effective_rate: f64,
    /// Blocking estimate customers saw during the window.
    pub p_bt_estimate: f64,
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

impl WindowStats {
    /// Requests resolved here: local ones that stayed, routed-in ones and retries.
    pub fn arrivals(&self) -> u64 {
        self.fresh - self.routed_out + self.routed_in + self.retry_local + self.retry_routed
    }

    /// Requests entering the local pricing block (`λ̃` numerator).
    pub fn effective_count(&self) -> u64 {
        self.fresh + self.retry_local + self.retry_routed
    }

    pub fn attempts(&self) -> u64 {
        self.attempts_local + self.attempts_routed
    }

    pub fn blocked(&self) -> u64 {
        self.blocked_local + self.blocked_routed
    }

    pub fn blocking(&self) -> f64 {
        ratio(self.blocked(), self.attempts()).unwrap_or(0.0)
    }

    pub fn local_blocking(&self) -> Option<f64> {
        ratio(self.blocked_local, self.attempts_local)
    }

    pub fn routed_blocking(&self) -> Option<f64> {
        ratio(self.blocked_routed, self.attempts_routed)
    }

    /// `γ1·B_EV + γ2·B_RB`, falling back to whichever class was observed.
    pub fn p_bt(&self, weights: BlockingWeights) -> f64 {
        match (self.local_blocking(), self.routed_blocking()) {
            (Some(l), Some(r)) => weights.local * l + weights.routed * r,
            (Some(b), None) | (None, Some(b)) => b,
            (None, None) => 0.0,
        }
    }

    /// Adds counts and revenue; quote fields are left alone.
    pub fn accumulate(&mut self, o: &WindowStats) {
        self.fresh += o.fresh;
        self.retry_local += o.retry_local;
        self.retry_routed += o.retry_routed;
        self.routed_in += o.routed_in;
        self.routed_out += o.routed_out;
        self.attempts_local += o.attempts_local;
        self.attempts_routed += o.attempts_routed;
        self.served += o.served;
        self.blocked_local += o.blocked_local;
        self.blocked_routed += o.blocked_routed;
        self.balked += o.balked;
        self.revenue += o.revenue;
    }
}

/// Occupancy histograms by number of vehicles in service.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Occupancy {
    /// Time spent with `n` vehicles in service.
    pub time: Vec<f64>,
    /// Fresh arrivals that found `n` vehicles in service.
    pub seen: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationMetrics {
    pub index: usize,
    /// `windows[w][s]`.
    pub windows: Vec<Vec<WindowStats>>,
    /// `routed[from][to]`.
    pub routed: Vec<Vec<u64>>,
    pub occupancy: Vec<Occupancy>,
    pub events: u64,
}

/// Sample mean and standard deviation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub sd: f64,
    pub n: usize,
}

impl Estimate {
    pub fn from_samples(xs: &[f64]) -> Self {
        let n = xs.len();
        if n == 0 {
            return Self::default();
        }
        let mean = xs.iter().sum::<f64>() / n as f64;
        let sd = if n > 1 {
            (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Self { mean, sd, n }
    }

    /// Standard error of the mean.
    pub fn se(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            self.sd / (self.n as f64).sqrt()
        }
    }
}

/// Output of [`run_simulation`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimMetrics {
    pub scenario: String,
    pub tier: ScenarioTier,
    pub seed: u64,
    pub horizon: f64,
    pub window: f64,
    pub slots: Vec<u32>,
    pub storage: Vec<u32>,
    pub thresholds: Vec<f64>,
    pub weights: BlockingWeights,
    pub replications: Vec<ReplicationMetrics>,
}

impl SimMetrics {
    pub fn n_stations(&self) -> usize {
        self.slots.len()
    }

    pub fn n_windows(&self) -> usize {
        self.replications.first().map_or(0, |r| r.windows.len())
    }

    /// Windows whose start lies in `[t0, t1)`.
    pub fn windows_between(&self, t0: f64, t1: f64) -> Range<usize> {
        let n = self.n_windows();
        let first = ((t0 / self.window).ceil().max(0.0) as usize).min(n);
        let last = ((t1 / self.window).ceil().max(0.0) as usize).clamp(first, n);
        first..last
    }

    pub fn all_windows(&self) -> Range<usize> {
        0..self.n_windows()
    }

    pub fn replication_totals(&self, rep: usize, range: Range<usize>) -> Vec<WindowStats> {
        let mut out = vec![WindowStats::default(); self.n_stations()];
        for w in &self.replications[rep].windows[range] {
            for (acc, s) in out.iter_mut().zip(w) {
                acc.accumulate(s);
            }
        }
        out
    }

    /// Counts summed over windows and replications.
    pub fn pooled_totals(&self, range: Range<usize>) -> Vec<WindowStats> {
        let mut out = vec![WindowStats::default(); self.n_stations()];
        for rep in 0..self.replications.len() {
            for (acc, s) in out.iter_mut().zip(self.replication_totals(rep, range.clone())) {
                acc.accumulate(&s);
            }
        }
        out
    }

    fn per_station<F: Fn(&WindowStats) -> Option<f64>>(&self, range: Range<usize>, f: F) -> Vec<Estimate> {
        let totals: Vec<Vec<WindowStats>> = (0..self.replications.len())
            .map(|r| self.replication_totals(r, range.clone()))
            .collect();
        (0..self.n_stations())
            .map(|s| {
                let xs: Vec<f64> = totals.iter().filter_map(|t| f(&t[s])).collect();
                Estimate::from_samples(&xs)
            })
            .collect()
    }

    /// Per-station blocked fraction of admission attempts, across replications
    /// that saw any attempt.
    pub fn blocking(&self, range: Range<usize>) -> Vec<Estimate> {
        self.per_station(range, |t| ratio(t.blocked(), t.attempts()))
    }

    pub fn p_bt(&self, range: Range<usize>) -> Vec<Estimate> {
        let w = self.weights;
        self.per_station(range, |t| (t.attempts() > 0).then(|| t.p_bt(w)))
    }

    pub fn station_served(&self, range: Range<usize>) -> Vec<Estimate> {
        self.per_station(range, |t| Some(t.served as f64))
    }

    fn network<F: Fn(&[WindowStats]) -> f64>(&self, range: Range<usize>, f: F) -> Estimate {
        let xs: Vec<f64> = (0..self.replications.len())
            .map(|r| f(&self.replication_totals(r, range.clone())))
            .collect();
        Estimate::from_samples(&xs)
    }

    pub fn served(&self, range: Range<usize>) -> Estimate {
        self.network(range, |t| t.iter().map(|s| s.served as f64).sum())
    }

    pub fn revenue(&self, range: Range<usize>) -> Estimate {
        self.network(range, |t| t.iter().map(|s| s.revenue).sum())
    }

    /// Arrival-weighted blocking over pooled counts; `None` without arrivals.
    pub fn weighted_blocking(&self, range: Range<usize>) -> Option<f64> {
        let pooled = self.pooled_totals(range);
        let rates: Vec<f64> = pooled.iter().map(|s| s.effective_count() as f64).collect();
        let blocking: Vec<f64> = pooled.iter().map(WindowStats::blocking).collect();
        weighted_blocking_of(&rates, &blocking)
    }

    /// Mean routed-customer matrix.
    pub fn routed_matrix(&self) -> Vec<Vec<f64>> {
        let n = self.n_stations();
        let reps = self.replications.len().max(1) as f64;
        let mut out = vec![vec![0.0; n]; n];
        for r in &self.replications {
            for (i, row) in r.routed.iter().enumerate() {
                for (j, c) in row.iter().enumerate() {
                    out[i][j] += *c as f64 / reps;
                }
            }
        }
        out
    }
}

/// `Σ w_i·B_i` with `w_i = λ_i / Σ λ_i`.
pub fn weighted_blocking_of(rates: &[f64], blocking: &[f64]) -> Option<f64> {
    let total: f64 = rates.iter().sum();
    if rates.len() != blocking.len() || total <= 0.0 {
        return None;
    }
    Some(rates.iter().zip(blocking).map(|(l, b)| l / total * b).sum())
}

/// Network weighted blocking over the windows starting in `[t0, t1)`.
pub fn network_weighted_blocking(metrics: &SimMetrics, t0: f64, t1: f64) -> Option<f64> {
    metrics.weighted_blocking(metrics.windows_between(t0, t1))
}

/// Tier-dependent station set-up shared by all replications.
#[derive(Debug, Clone)]
pub struct SimSetup {
    pub tier: ScenarioTier,
    pub stations: Vec<StationConfig>,
    pub thresholds: Vec<f64>,
    pub shares: Vec<f64>,
    pub allocation: Option<AllocationReport>,
}

/// Station shares implied by the scenario's assignment rule.
pub fn scenario_shares(scenario: &NetworkScenario) -> Result<Vec<f64>> {
    match &scenario.demand.assignment {
        Assignment::Shares { shares } => Ok(shares.clone()),
        Assignment::Spatial => {
            let mut rng = ChaCha8Rng::seed_from_u64(scenario.run.seed);
            station_shares(&scenario.demand.spatial, &scenario.locations(), SHARE_SAMPLES, &mut rng)
        }
    }
}

/// Capacities, thresholds and shares for one tier.
pub fn prepare(scenario: &NetworkScenario, tier: ScenarioTier) -> Result<SimSetup> {
    scenario.validate()?;
    let shares = scenario_shares(scenario)?;
    let mut stations = scenario.stations.clone();
    let allocation = if tier.allocates() {
        let rates = station_rates_at(&scenario.demand.profile, &shares, scenario.demand.allocation_time);
        let report = allocate(&scenario.network_topology()?, &rates)?;
        for (st, s) in stations.iter_mut().zip(report.slots()) {
            st.grid_slots = *s;
        }
        Some(report)
    } else {
        None
    };
    let thresholds = stations
        .iter()
        .map(|st| match max_admissible_rate(st) {
            Ok(v) => Ok(v),
            // Congested at any load.
            Err(Error::Infeasible(_)) => Ok(f64::MIN_POSITIVE),
            Err(e) => Err(e),
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SimSetup {
        tier,
        stations,
        thresholds,
        shares,
        allocation,
    })
}

/// Memoized chain blocking at quantized loads, shared across replications.
#[derive(Debug, Default)]
struct BlockingCache {
    entries: Mutex<HashMap<(usize, u64), f64>>,
}

impl BlockingCache {
    fn get(&self, station: usize, cfg: &StationConfig, load: f64) -> Result<f64> {
        let key = (load / LOAD_QUANTUM).round().max(0.0) as u64;
        if key == 0 {
            return Ok(0.0);
        }
        if let Some(b) = self.entries.lock().expect("cache poisoned").get(&(station, key)) {
            return Ok(*b);
        }
        let b = blocking_probability(cfg, key as f64 * LOAD_QUANTUM)?;
        self.entries.lock().expect("cache poisoned").insert((station, key), b);
        Ok(b)
    }
}

struct RunContext<'a> {
    scenario: &'a NetworkScenario,
    setup: SimSetup,
    sampler: SpatialSampler,
    locations: Vec<Location>,
    cumulative_shares: Vec<f64>,
    horizon: f64,
    n_windows: usize,
    cache: BlockingCache,
    qos_max: Vec<f64>,
    price_normal: Vec<f64>,
    block_penalty: Vec<f64>,
}

impl<'a> RunContext<'a> {
    fn new(scenario: &'a NetworkScenario, tier: ScenarioTier, horizon: f64) -> Result<Self> {
        let setup = prepare(scenario, tier)?;
        let mut acc = 0.0;
        let cumulative_shares = setup
            .shares
            .iter()
            .map(|s| {
                acc += s;
                acc
            })
            .collect();
        let window = scenario.run.window;
        Ok(Self {
            scenario,
            sampler: scenario.demand.spatial.sampler()?,
            locations: scenario.locations(),
            cumulative_shares,
            horizon,
            n_windows: ((horizon / window).ceil() as usize).max(1),
            cache: BlockingCache::default(),
            qos_max: setup.stations.iter().map(|s| s.qos_max).collect(),
            price_normal: setup.stations.iter().map(|s| s.price_normal).collect(),
            block_penalty: setup.stations.iter().map(|s| s.price_block_penalty).collect(),
            setup,
        })
    }
}

#[derive(Debug, Clone)]
struct StationRuntime {
    slots: u32,
    storage_cap: u32,
    in_service: u32,
    storage: u32,
    token: u64,
    recharge_pending: bool,
}

impl StationRuntime {
    fn admit(&mut self) -> bool {
        if self.in_service < self.slots {
            self.in_service += 1;
            true
        } else if self.storage > 0 {
            self.in_service += 1;
            self.storage -= 1;
            true
        } else {
            false
        }
    }

    fn needs_recharge(&self) -> bool {
        self.in_service < self.slots && self.storage < self.storage_cap
    }
}

struct Floor<'a>(&'a mut [StationRuntime]);

impl Admission for Floor<'_> {
    fn admit(&mut self, station: usize) -> bool {
        self.0[station].admit()
    }
}

fn exp1<R: Rng>(rng: &mut R) -> f64 {
    Exp1.sample(rng)
}

fn stream(seed: u64, replication: usize, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replication as u64 * 4 + index);
    rng
}

struct Replication<'c, 'a> {
    ctx: &'c RunContext<'a>,
    index: usize,
    queue: EventQueue,
    now: f64,
    last_event: f64,
    stations: Vec<StationRuntime>,
    arrivals: ChaCha8Rng,
    dynamics: ChaCha8Rng,
    retries: ChaCha8Rng,
    windows: Vec<Vec<WindowStats>>,
    current: usize,
    signals: Vec<PriceSignal>,
    acceptance: Vec<f64>,
    blocking_est: Vec<f64>,
    routed: Vec<Vec<u64>>,
    occupancy: Vec<Occupancy>,
    events: u64,
}

impl<'c, 'a> Replication<'c, 'a> {
    fn new(ctx: &'c RunContext<'a>, seed: u64, index: usize) -> Self {
        let n = ctx.setup.stations.len();
        let stations: Vec<StationRuntime> = ctx
            .setup
            .stations
            .iter()
            .map(|s| StationRuntime {
                slots: s.grid_slots,
                storage_cap: s.storage_units,
                in_service: 0,
                storage: s.storage_units,
                token: 0,
                recharge_pending: false,
            })
            .collect();
        let occupancy = stations
            .iter()
            .map(|s| {
                let states = (s.slots + s.storage_cap + 1) as usize;
                Occupancy {
                    time: vec![0.0; states],
                    seen: vec![0; states],
                }
            })
            .collect();
        let signals = (0..n)
            .map(|i| PriceSignal {
                station: i,
                price: ctx.price_normal[i],
                congested: false,
                effective_rate: 0.0,
            })
            .collect();
        Self {
            ctx,
            index,
            queue: EventQueue::new(),
            now: 0.0,
            last_event: 0.0,
            stations,
            arrivals: stream(seed, index, 0),
            dynamics: stream(seed, index, 1),
            retries: stream(seed, index, 2),
            windows: vec![vec![WindowStats::default(); n]; ctx.n_windows],
            current: 0,
            signals,
            acceptance: vec![1.0; n],
            blocking_est: vec![0.0; n],
            routed: vec![vec![0; n]; n],
            occupancy,
            events: 0,
        }
    }

    fn run(mut self) -> Result<ReplicationMetrics> {
        let window = self.ctx.scenario.run.window;
        self.stamp_window(0);
        for k in 1..self.ctx.n_windows {
            self.queue
                .push(k as f64 * window, EventKind::RateWindowTick, Payload::Window(k));
        }
        self.schedule_arrival(0.0);
        while let Some(ev) = self.queue.pop() {
            if ev.time >= self.ctx.horizon {
                break;
            }
            self.advance(ev.time);
            self.events += 1;
            match ev.payload {
                Payload::None => self.on_arrival()?,
                Payload::Station(s) => self.on_departure(s),
                Payload::Recharge { station, token } => self.on_recharge(station, token),
                Payload::Retry(ticket) => self.on_retry(ticket)?,
                Payload::Window(k) => self.on_tick(k)?,
            }
        }
        self.advance(self.ctx.horizon);
        Ok(ReplicationMetrics {
            index: self.index,
            windows: self.windows,
            routed: self.routed,
            occupancy: self.occupancy,
            events: self.events,
        })
    }

    fn advance(&mut self, t: f64) {
        let dt = t - self.last_event;
        if dt > 0.0 {
            for (occ, st) in self.occupancy.iter_mut().zip(&self.stations) {
                occ.time[st.in_service as usize] += dt;
            }
        }
        self.last_event = t;
        self.now = t;
    }

    /// Next fresh arrival after `from`, by thinning against the peak rate.
    fn schedule_arrival(&mut self, from: f64) {
        let profile = &self.ctx.scenario.demand.profile;
        let peak = profile.max_rate();
        if peak <= 0.0 {
            return;
        }
        let mut t = from;
        loop {
            t += exp1(&mut self.arrivals) / peak;
            if t >= self.ctx.horizon {
                return;
            }
            let u: f64 = self.arrivals.random();
            if u * peak < profile.rate_at(t) {
                self.queue.push(t, EventKind::Arrival, Payload::None);
                return;
            }
        }
    }

    fn draw_customer(&mut self) -> (EvCustomer, f64, f64) {
        let ctx = self.ctx;
        let rng = &mut self.arrivals;
        let location = match &ctx.scenario.demand.assignment {
            Assignment::Spatial => ctx.sampler.sample(rng),
            Assignment::Shares { .. } => {
                let u: f64 = rng.random();
                let n = ctx.cumulative_shares.len();
                let station = ctx.cumulative_shares.iter().position(|c| u < *c).unwrap_or(n - 1);
                ctx.sampler.sample_in_cell(&ctx.locations, station, rng)
            }
        };
        let game = &ctx.scenario.game;
        let uniform = |rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)| lo + (hi - lo) * rng.random::<f64>();
        let incentive = uniform(rng, game.incentive_range);
        let dissatisfaction = uniform(rng, game.dissatisfaction_range);
        let accept_draw: f64 = rng.random();
        let service = exp1(rng);
        let customer = EvCustomer::new(location, incentive, dissatisfaction, game.drive_cost);
        (customer, accept_draw, service)
    }

    fn on_arrival(&mut self) -> Result<()> {
        let (mut customer, accept_draw, service) = self.draw_customer();
        let ctx = self.ctx;
        let nearest = nearest_station(&customer.location, &ctx.locations)?;
        let seen = self.stations[nearest].in_service as usize;
        self.occupancy[nearest].seen[seen] += 1;
        let view = NetworkView {
            locations: &ctx.locations,
            signals: &self.signals,
            acceptance: &self.acceptance,
            blocking: &self.blocking_est,
            qos_max: &ctx.qos_max,
            price_normal: &ctx.price_normal,
            block_penalty: &ctx.block_penalty,
            urgency: ctx.scenario.game.urgency,
            routing: ctx.setup.tier.controls(),
        };
        let step = decentralized_control_step(&mut customer, &view, &mut Floor(&mut self.stations), accept_draw)?;

        let w = self.current;
        self.windows[w][nearest].fresh += 1;
        let routed = step.decision.is_routed();
        if routed {
            let to = step.station();
            self.windows[w][nearest].routed_out += 1;
            self.windows[w][to].routed_in += 1;
            self.routed[nearest][to] += 1;
        }
        self.settle(step.station(), routed, step.result, service);
        self.schedule_arrival(self.now);
        Ok(())
    }

    fn on_retry(&mut self, ticket: RetryTicket) -> Result<()> {
        let s = ticket.station;
        let w = self.current;
        if ticket.routed {
            self.windows[w][s].retry_routed += 1;
        } else {
            self.windows[w][s].retry_local += 1;
        }
        let price = self.signals[s].price;
        let controls = self.ctx.setup.tier.controls();
        let balk = controls && price > self.ctx.price_normal[s] && self.retries.random::<f64>() >= self.acceptance[s];
        let result = if balk {
            StepResult::Balked
        } else if self.stations[s].admit() {
            StepResult::Served { price }
        } else {
            StepResult::Blocked {
                penalty: self.ctx.block_penalty[s],
            }
        };
        self.settle(s, ticket.routed, result, ticket.service);
        Ok(())
    }

    fn settle(&mut self, station: usize, routed: bool, result: StepResult, service: f64) {
        let w = self.current;
        let stats = &mut self.windows[w][station];
        match result {
            StepResult::Served { price } => {
                stats.served += 1;
                stats.revenue += price;
                if routed {
                    stats.attempts_routed += 1;
                } else {
                    stats.attempts_local += 1;
                }
                let mu = self.ctx.setup.stations[station].charge_rate;
                self.queue
                    .push(self.now + service / mu, EventKind::Departure, Payload::Station(station));
                self.sync_recharge(station);
            }
            StepResult::Blocked { penalty } => {
                stats.revenue -= penalty;
                if routed {
                    stats.attempts_routed += 1;
                    stats.blocked_routed += 1;
                } else {
                    stats.attempts_local += 1;
                    stats.blocked_local += 1;
                }
                let run = &self.ctx.scenario.run;
                if self.retries.random::<f64>() < run.retry_fraction {
                    let delay = exp1(&mut self.retries) * run.retry_mean_delay;
                    let ticket = RetryTicket {
                        station,
                        routed,
                        service,
                    };
                    self.queue
                        .push(self.now + delay, EventKind::Retry, Payload::Retry(ticket));
                }
            }
            StepResult::Balked => stats.balked += 1,
        }
    }

    fn on_departure(&mut self, s: usize) {
        self.stations[s].in_service -= 1;
        self.sync_recharge(s);
    }

    fn on_recharge(&mut self, s: usize, token: u64) {
        let st = &mut self.stations[s];
        if token != st.token || !st.recharge_pending {
            return;
        }
        st.recharge_pending = false;
        st.storage += 1;
        self.sync_recharge(s);
    }

    /// Starts or cancels the storage recharge clock so it runs exactly while
    /// grid slack and free storage coexist.
    fn sync_recharge(&mut self, s: usize) {
        let nu = self.ctx.setup.stations[s].storage_recharge_rate;
        let st = &mut self.stations[s];
        let need = st.needs_recharge();
        if need && !st.recharge_pending {
            st.token += 1;
            st.recharge_pending = true;
            let token = st.token;
            let t = self.now + exp1(&mut self.dynamics) / nu;
            self.queue
                .push(t, EventKind::StorageRecharge, Payload::Recharge { station: s, token });
        } else if !need && st.recharge_pending {
            st.token += 1;
            st.recharge_pending = false;
        }
    }

    fn on_tick(&mut self, k: usize) -> Result<()> {
        let ctx = self.ctx;
        let window = ctx.scenario.run.window;
        let controls = ctx.setup.tier.controls();
        for s in 0..self.stations.len() {
            let prev = &self.windows[k - 1][s];
            let effective = prev.effective_count() as f64 / window;
            if controls {
                let cfg = &ctx.setup.stations[s];
                let threshold = ctx.setup.thresholds[s];
                self.signals[s] = PriceSignal::quote(s, effective, threshold, cfg.price_normal, cfg.theta)?;
                self.acceptance[s] = acceptance_fraction(effective, threshold)?;
                self.blocking_est[s] = match ctx.scenario.game.estimator {
                    BlockingEstimator::Analytic => {
                        let load = prev.attempts() as f64 / window;
                        ctx.cache.get(s, cfg, load)?
                    }
                    BlockingEstimator::Empirical => prev.blocking(),
                };
            } else {
                self.signals[s].effective_rate = effective;
            }
        }
        self.current = k;
        self.stamp_window(k);
        Ok(())
    }

    fn stamp_window(&mut self, k: usize) {
        for (s, stats) in self.windows[k].iter_mut().enumerate() {
            let sig = self.signals[s];
            stats.price = sig.price;
            stats.congested = sig.congested;
            stats.effective_rate = sig.effective_rate;
            stats.p_bt_estimate = self.blocking_est[s];
        }
    }
}

fn check_run(horizon: f64, replications: usize) -> Result<()> {
    if !(horizon.is_finite() && horizon > 0.0) {
        return Err(Error::param(format!("horizon must be finite and > 0, got {horizon}")));
    }
    if replications == 0 {
        return Err(Error::param("at least one replication is required"));
    }
    Ok(())
}

/// Runs `replications` independent replications of one tier.
pub fn run_simulation(
    scenario: &NetworkScenario,
    tier: ScenarioTier,
    seed: u64,
    horizon: f64,
    replications: usize,
) -> Result<SimMetrics> {
    check_run(horizon, replications)?;
    let ctx = RunContext::new(scenario, tier, horizon)?;
    let reps = (0..replications)
        .into_par_iter()
        .map(|i| Replication::new(&ctx, seed, i).run())
        .collect::<Result<Vec<_>>>()?;
    Ok(SimMetrics {
        scenario: scenario.name.clone(),
        tier,
        seed,
        horizon,
        window: scenario.run.window,
        slots: ctx.setup.stations.iter().map(|s| s.grid_slots).collect(),
        storage: ctx.setup.stations.iter().map(|s| s.storage_units).collect(),
        thresholds: ctx.setup.thresholds.clone(),
        weights: scenario.game.weights,
        replications: reps,
    })
}

/// [`run_simulation`] with the scenario's own tier and run settings.
pub fn run_scenario(scenario: &NetworkScenario) -> Result<SimMetrics> {
    let r = &scenario.run;
    run_simulation(scenario, scenario.tier, r.seed, r.horizon, r.replications)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TierRow {
    pub hour: usize,
    pub tier: ScenarioTier,
    pub served: Estimate,
    pub revenue: Estimate,
    pub weighted_blocking: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TierComparison {
    pub rows: Vec<TierRow>,
    /// Per hour, `100·(served_full − served_baseline)/served_baseline`.
    pub served_increase_pct: Vec<Option<f64>>,
}

impl TierComparison {
    pub fn row(&self, hour: usize, tier: ScenarioTier) -> Option<&TierRow> {
        self.rows.iter().find(|r| r.hour == hour && r.tier == tier)
    }
}

/// Runs all three tiers on the same customer streams and tabulates them by
/// hour of the horizon.
pub fn compare_tiers(scenario: &NetworkScenario, seed: u64) -> Result<TierComparison> {
    let r = &scenario.run;
    let hours = r.horizon.ceil() as usize;
    let mut rows = Vec::new();
    let mut served = Vec::new();
    for tier in ScenarioTier::ALL {
        let m = run_simulation(scenario, tier, seed, r.horizon, r.replications)?;
        let mut per_hour = Vec::with_capacity(hours);
        for h in 0..hours {
            let range = m.windows_between(h as f64, h as f64 + 1.0);
            let row = TierRow {
                hour: h,
                tier,
                served: m.served(range.clone()),
                revenue: m.revenue(range.clone()),
                weighted_blocking: m.weighted_blocking(range),
            };
            per_hour.push(row.served.mean);
            rows.push(row);
        }
        served.push(per_hour);
    }
    let served_increase_pct = (0..hours)
        .map(|h| {
            let base = served[0][h];
            (base > 0.0).then(|| 100.0 * (served[2][h] - base) / base)
        })
        .collect();
    Ok(TierComparison {
        rows,
        served_increase_pct,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::demand::DemandProfile;
    use crate::scenario::erlang_check;

    #[test]
    fn event_order_breaks_ties_by_kind_then_sequence() {
        let mut q = EventQueue::new();
        q.push(1.0, EventKind::Arrival, Payload::None);
        q.push(1.0, EventKind::Departure, Payload::Station(0));
        q.push(0.5, EventKind::Arrival, Payload::None);
        q.push(1.0, EventKind::Departure, Payload::Station(1));
        let order: Vec<_> = std::iter::from_fn(|| q.pop())
            .map(|e| (e.time, e.kind, e.payload))
            .collect();
        assert_eq!(
            order,
            vec![
                (0.5, EventKind::Arrival, Payload::None),
                (1.0, EventKind::Departure, Payload::Station(0)),
                (1.0, EventKind::Departure, Payload::Station(1)),
                (1.0, EventKind::Arrival, Payload::None),
            ]
        );
    }

    #[test]
    fn weighted_blocking_examples() {
        assert_eq!(weighted_blocking_of(&[1.0, 1.0], &[0.1, 0.3]), Some(0.2));
        assert_eq!(weighted_blocking_of(&[3.0], &[0.25]), Some(0.25));
        assert_eq!(weighted_blocking_of(&[0.0, 0.0], &[0.1, 0.3]), None);
    }

    #[test]
    fn zero_demand_is_empty() {
        let mut s = erlang_check();
        s.demand.profile = DemandProfile::Constant { rate: 0.0 };
        let m = run_simulation(&s, ScenarioTier::Baseline, 3, 10.0, 2).unwrap();
        let all = m.all_windows();
        assert_eq!(m.revenue(all.clone()).mean, 0.0);
        assert_eq!(m.weighted_blocking(all.clone()), None);
        assert!(m.pooled_totals(all).iter().all(|t| t.arrivals() == 0));
    }

    #[test]
    fn rejects_bad_run_parameters() {
        let s = erlang_check();
        assert!(run_simulation(&s, ScenarioTier::Baseline, 1, 0.0, 1).is_err());
        assert!(run_simulation(&s, ScenarioTier::Baseline, 1, f64::NAN, 1).is_err());
        assert!(run_simulation(&s, ScenarioTier::Baseline, 1, 10.0, 0).is_err());
    }

    #[test]
    fn estimate_statistics() {
        let e = Estimate::from_samples(&[1.0, 2.0, 3.0]);
        assert_eq!(e.mean, 2.0);
        assert!((e.sd - 1.0).abs() < 1e-12);
        assert_eq!(Estimate::from_samples(&[]).n, 0);
    }
}

//! Scenario files.
//!
//! A scenario is a single TOML document. Parsing is strict: unknown keys are
//! rejected and every value is checked after loading, with errors pointing at
//! the offending field (`stations[2].charge_rate`, `game.weights`, ...).

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::allocation::NetworkTopology;
use crate::demand::{DemandProfile, SpatialDemand};
use crate::error::{Error, Result};
use crate::location::Location;
use crate::pricing::{DEFAULT_RETRY_FRACTION, DEFAULT_RETRY_MEAN_DELAY};
use crate::station::{BlockingWeights, StationConfig};

/// Names of the built-in scenarios.
pub const PRESETS: [&str; 3] = ["paper-single-sine", "paper-network", "erlang-check"];

/// How much control the operator exercises.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioTier {
    /// Fixed capacities, every customer goes to the nearest station.
    Baseline,
    /// Capacities from the two-phase allocation.
    #[serde(alias = "allocation")]
    AllocationOnly,
    /// Allocation plus congestion pricing and routing.
    #[serde(alias = "full")]
    FullControl,
}

impl ScenarioTier {
    pub const ALL: [ScenarioTier; 3] = [
        ScenarioTier::Baseline,
        ScenarioTier::AllocationOnly,
        ScenarioTier::FullControl,
    ];

    pub fn allocates(self) -> bool {
        self != ScenarioTier::Baseline
    }

    pub fn controls(self) -> bool {
        self == ScenarioTier::FullControl
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ScenarioTier::Baseline => "baseline",
            ScenarioTier::AllocationOnly => "allocation_only",
            ScenarioTier::FullControl => "full_control",
        }
    }
}

impl std::fmt::Display for ScenarioTier {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Grid budget and per-station feeder cap.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologySection {
    pub s_max: u32,
    pub s_limit: u32,
    /// Road distances between stations; Euclidean when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub distances: Option<Vec<Vec<f64>>>,
}

/// How fresh customers are spread over stations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Assignment {
    /// Locations drawn from the spatial mixture; each customer's nearest
    /// station follows from geometry.
    Spatial,
    /// Each customer's nearest station is drawn with these probabilities and
    /// its location is then drawn from that station's catchment.
    Shares { shares: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DemandSection {
    #[serde(default)]
    pub spatial: SpatialDemand,
    pub profile: DemandProfile,
    pub assignment: Assignment,
    /// Time at which per-station rates are read to size the allocation.
    pub allocation_time: f64,
}

/// Which blocking estimate customers see when ranking stations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockingEstimator {
    /// Chain blocking probability at the station's recent offered load.
    #[default]
    Analytic,
    /// Blocked fraction observed in the previous window.
    Empirical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GameSection {
    pub weights: BlockingWeights,
    /// Blocking sensitivity `ξ`.
    pub urgency: f64,
    pub incentive_range: (f64, f64),
    pub dissatisfaction_range: (f64, f64),
    pub drive_cost: f64,
    /// Candidate θ values for tuning.
    pub theta_grid: Vec<f64>,
    /// Stations whose θ is tuned; the rest keep their configured θ.
    pub tuned_stations: Vec<usize>,
    #[serde(default)]
    pub estimator: BlockingEstimator,
}

impl Default for GameSection {
    fn default() -> Self {
        Self {
            weights: BlockingWeights::default(),
            urgency: 0.1,
            incentive_range: (0.75, 1.0),
            dissatisfaction_range: (0.02, 0.05),
            drive_cost: 0.03,
            theta_grid: (0..=20).map(|i| f64::from(i) / 20.0).collect(),
            tuned_stations: Vec::new(),
            estimator: BlockingEstimator::Analytic,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub seed: u64,
    pub horizon: f64,
    pub replications: usize,
    /// Rate-estimation window length.
    pub window: f64,
    pub retry_fraction: f64,
    pub retry_mean_delay: f64,
    /// Leading stretch excluded from summary statistics.
    #[serde(default)]
    pub warmup: f64,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            seed: 1,
            horizon: 24.0,
            replications: 20,
            window: 0.25,
            retry_fraction: DEFAULT_RETRY_FRACTION,
            retry_mean_delay: DEFAULT_RETRY_MEAN_DELAY,
            warmup: 0.0,
        }
    }
}

/// A complete, validated simulation setup.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkScenario {
    pub name: String,
    pub tier: ScenarioTier,
    pub topology: TopologySection,
    pub stations: Vec<StationConfig>,
    pub demand: DemandSection,
    #[serde(default)]
    pub game: GameSection,
    #[serde(default)]
    pub run: RunSection,
}

/// The serialized form of a scenario.
pub type ScenarioFile = NetworkScenario;

fn fail(path: impl Into<String>, message: impl Into<String>) -> Error {
    Error::scenario(path, message)
}

fn nonneg(path: &str, v: f64) -> Result<()> {
    if v.is_finite() && v >= 0.0 {
        Ok(())
    } else {
        Err(fail(path, format!("must be finite and >= 0, got {v}")))
    }
}

fn positive(path: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(fail(path, format!("must be finite and > 0, got {v}")))
    }
}

fn range(path: &str, r: (f64, f64)) -> Result<()> {
    nonneg(path, r.0)?;
    nonneg(path, r.1)?;
    if r.0 > r.1 {
        return Err(fail(path, format!("lower bound {} exceeds upper bound {}", r.0, r.1)));
    }
    Ok(())
}

/// Rewrites a module-level parameter error as a scenario error at `path`.
fn at<T>(path: impl Into<String>, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Parameter(m) => fail(path, m),
        other => other,
    })
}

impl NetworkScenario {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let scenario: NetworkScenario = toml::from_str(text).map_err(|e| {
            let message = e.message().to_string();
            let path = match e.span() {
                Some(span) => {
                    let line = text[..span.start.min(text.len())].matches('\n').count() + 1;
                    format!("line {line}")
                }
                None => "<document>".into(),
            };
            fail(path, message)
        })?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Scenario { path: field, message } => fail(format!("{}: {field}", path.as_ref().display()), message),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| fail("<document>", e.to_string()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_toml_string()?)?;
        Ok(())
    }

    pub fn locations(&self) -> Vec<Location> {
        self.stations.iter().map(|s| s.location).collect()
    }

    pub fn network_topology(&self) -> Result<NetworkTopology> {
        let stations = self.stations.clone();
        let t = &self.topology;
        match &t.distances {
            Some(d) => NetworkTopology::with_distances(stations, d.clone(), t.s_max, t.s_limit),
            None => NetworkTopology::new(stations, t.s_max, t.s_limit),
        }
    }

    /// Copy with the demand profile frozen at its value at time `t`.
    pub fn at_constant_rate(&self, t: f64) -> Self {
        let mut s = self.clone();
        s.demand.profile = DemandProfile::Constant {
            rate: self.demand.profile.rate_at(t),
        };
        s
    }

    pub fn validate(&self) -> Result<()> {
        if self.stations.is_empty() {
            return Err(fail("stations", "at least one station is required"));
        }
        let n = self.stations.len();
        for (i, st) in self.stations.iter().enumerate() {
            at(format!("stations[{i}]"), st.validate())?;
            let loc = st.location;
            if !(loc.x.is_finite() && loc.y.is_finite()) {
                return Err(fail(format!("stations[{i}].location"), "coordinates must be finite"));
            }
        }

        if self.topology.s_limit > self.topology.s_max && self.topology.s_max > 0 {
            log::debug!("s_limit exceeds s_max; the budget binds first");
        }
        if let Some(d) = &self.topology.distances {
            if d.len() != n || d.iter().any(|row| row.len() != n) {
                return Err(fail("topology.distances", format!("must be a {n}x{n} matrix")));
            }
        }
        at("topology", self.network_topology().and_then(|t| t.validate()))?;

        at("demand.spatial", self.demand.spatial.validate())?;
        at("demand.profile", self.demand.profile.validate())?;
        nonneg("demand.allocation_time", self.demand.allocation_time)?;
        if let Assignment::Shares { shares } = &self.demand.assignment {
            if shares.len() != n {
                return Err(fail(
                    "demand.assignment.shares",
                    format!("expected {n} entries, got {}", shares.len()),
                ));
            }
            for (i, s) in shares.iter().enumerate() {
                nonneg(&format!("demand.assignment.shares[{i}]"), *s)?;
            }
            let total: f64 = shares.iter().sum();
            if (total - 1.0).abs() > 1e-9 {
                return Err(fail("demand.assignment.shares", format!("must sum to 1, got {total}")));
            }
        }

        let g = &self.game;
        at("game.weights", g.weights.validate())?;
        nonneg("game.urgency", g.urgency)?;
        range("game.incentive_range", g.incentive_range)?;
        range("game.dissatisfaction_range", g.dissatisfaction_range)?;
        nonneg("game.drive_cost", g.drive_cost)?;
        for (i, th) in g.theta_grid.iter().enumerate() {
            nonneg(&format!("game.theta_grid[{i}]"), *th)?;
        }
        for (i, s) in g.tuned_stations.iter().enumerate() {
            if *s >= n {
                return Err(fail(
                    format!("game.tuned_stations[{i}]"),
                    format!("station index {s} out of range (have {n})"),
                ));
            }
        }

        let r = &self.run;
        positive("run.horizon", r.horizon)?;
        positive("run.window", r.window)?;
        if r.replications == 0 {
            return Err(fail("run.replications", "must be >= 1"));
        }
        if !(0.0..=1.0).contains(&r.retry_fraction) {
            return Err(fail(
                "run.retry_fraction",
                format!("must be in [0, 1], got {}", r.retry_fraction),
            ));
        }
        positive("run.retry_mean_delay", r.retry_mean_delay)?;
        nonneg("run.warmup", r.warmup)?;
        if r.warmup >= r.horizon {
            return Err(fail("run.warmup", "must be shorter than the horizon"));
        }
        Ok(())
    }
}

/// Layout of the five-station study area.
pub fn paper_layout() -> Vec<Location> {
    [(5.0, 25.0), (10.0, 10.0), (25.0, 25.0), (15.0, 15.0), (25.0, 5.0)]
        .into_iter()
        .map(Location::from)
        .collect()
}

/// Five stations, daily demand, baseline capacities `[7, 8, 8, 8, 8]`.
pub fn paper_network() -> NetworkScenario {
    let stations = paper_layout()
        .into_iter()
        .zip([7, 8, 8, 8, 8])
        .map(|(location, s)| StationConfig {
            price_block_penalty: 6.0,
            location,
            ..StationConfig::with_capacity(s, 8, 2.0, 3.0)
        })
        .collect();
    NetworkScenario {
        name: "paper-network".into(),
        tier: ScenarioTier::Baseline,
        topology: TopologySection {
            s_max: 39,
            s_limit: 13,
            distances: None,
        },
        stations,
        demand: DemandSection {
            spatial: SpatialDemand::default(),
            profile: DemandProfile::daily(),
            assignment: Assignment::Shares {
                shares: vec![0.01, 0.50, 0.42, 0.02, 0.05],
            },
            allocation_time: 16.0,
        },
        game: GameSection {
            tuned_stations: vec![1, 2],
            ..GameSection::default()
        },
        run: RunSection::default(),
    }
}

/// One station under sinusoidal demand, time measured in slots.
pub fn paper_single_sine() -> NetworkScenario {
    let station = StationConfig {
        qos_max: 0.01,
        qos_min: 1e-4,
        ..StationConfig::with_capacity(5, 5, 2.0, 4.0)
    };
    NetworkScenario {
        name: "paper-single-sine".into(),
        tier: ScenarioTier::FullControl,
        topology: TopologySection {
            s_max: 5,
            s_limit: 5,
            distances: None,
        },
        stations: vec![station],
        demand: DemandSection {
            spatial: SpatialDemand::default(),
            profile: DemandProfile::Sine {
                base: 5.0,
                amplitude: 1.75,
                period: 80.0,
                phase: 20.0,
            },
            assignment: Assignment::Shares { shares: vec![1.0] },
            allocation_time: 40.0,
        },
        game: GameSection::default(),
        run: RunSection {
            horizon: 160.0,
            window: 1.0,
            ..RunSection::default()
        },
    }
}

/// One Erlang loss station (no storage) under constant load.
pub fn erlang_check() -> NetworkScenario {
    let station = StationConfig {
        qos_max: 0.2,
        ..StationConfig::with_capacity(5, 0, 1.0, 1.0)
    };
    NetworkScenario {
        name: "erlang-check".into(),
        tier: ScenarioTier::Baseline,
        topology: TopologySection {
            s_max: 5,
            s_limit: 5,
            distances: None,
        },
        stations: vec![station],
        demand: DemandSection {
            spatial: SpatialDemand::default(),
            profile: DemandProfile::Constant { rate: 4.0 },
            assignment: Assignment::Shares { shares: vec![1.0] },
            allocation_time: 0.0,
        },
        game: GameSection::default(),
        run: RunSection {
            horizon: 2_500.0,
            replications: 10,
            window: 50.0,
            retry_fraction: 0.0,
            ..RunSection::default()
        },
    }
}

pub fn preset(name: &str) -> Result<NetworkScenario> {
    match name {
        "paper-network" => Ok(paper_network()),
        "paper-single-sine" => Ok(paper_single_sine()),
        "erlang-check" => Ok(erlang_check()),
        other => Err(fail(
            "<preset>",
            format!("unknown preset {other:?}, expected one of {}", PRESETS.join(", ")),
        )),
    }
}

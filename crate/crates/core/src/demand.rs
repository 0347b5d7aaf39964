//! Where and when customers ask for a charge.

use rand::Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::location::Location;

/// Region covered by the customers outside the hotspot patch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Complement {
    /// Uniform over the whole square, patch included.
    #[default]
    FullArea,
    /// Uniform over the square minus the patch.
    OutsidePatch,
}

/// Two-component spatial mixture: a Beta-distributed hotspot in the
/// `[0, patch_scale]²` corner plus a uniform remainder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpatialDemand {
    /// Side of the square service area.
    pub area: f64,
    pub hotspot_fraction: f64,
    pub beta_x: (f64, f64),
    pub beta_y: (f64, f64),
    pub patch_scale: f64,
    #[serde(default)]
    pub complement: Complement,
}

impl Default for SpatialDemand {
    fn default() -> Self {
        Self {
            area: 30.0,
            hotspot_fraction: 0.5,
            beta_x: (4.42, 0.763),
            beta_y: (2.42, 0.799),
            patch_scale: 15.0,
            complement: Complement::FullArea,
        }
    }
}

impl SpatialDemand {
    pub fn validate(&self) -> Result<()> {
        let shapes = [self.beta_x.0, self.beta_x.1, self.beta_y.0, self.beta_y.1];
        if shapes.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::param("Beta shape parameters must be > 0"));
        }
        if !(0.0..=1.0).contains(&self.hotspot_fraction) {
            return Err(Error::param(format!(
                "hotspot_fraction must be in [0, 1], got {}",
                self.hotspot_fraction
            )));
        }
        if !(self.area > 0.0 && self.patch_scale > 0.0 && self.patch_scale <= self.area) {
            return Err(Error::param(format!(
                "need 0 < patch_scale <= area, got patch_scale={} area={}",
                self.patch_scale, self.area
            )));
        }
        if self.complement == Complement::OutsidePatch && self.patch_scale >= self.area && self.hotspot_fraction < 1.0 {
            return Err(Error::param("patch covers the whole area, nothing lies outside it"));
        }
        Ok(())
    }

    pub fn sampler(&self) -> Result<SpatialSampler> {
        SpatialSampler::new(self)
    }
}

/// Pre-built sampler for a [`SpatialDemand`].
#[derive(Debug, Clone)]
pub struct SpatialSampler {
    mixture: SpatialDemand,
    beta_x: Beta<f64>,
    beta_y: Beta<f64>,
}

impl SpatialSampler {
    pub fn new(mixture: &SpatialDemand) -> Result<Self> {
        mixture.validate()?;
        let beta = |(a, b): (f64, f64)| Beta::new(a, b).map_err(|e| Error::param(format!("Beta({a}, {b}): {e}")));
        Ok(Self {
            mixture: mixture.clone(),
            beta_x: beta(mixture.beta_x)?,
            beta_y: beta(mixture.beta_y)?,
        })
    }

    pub fn mixture(&self) -> &SpatialDemand {
        &self.mixture
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Location {
        let s = &self.mixture;
        if rng.random::<f64>() < s.hotspot_fraction {
            return Location::new(
                s.patch_scale * self.beta_x.sample(rng),
                s.patch_scale * self.beta_y.sample(rng),
            );
        }
        loop {
            let loc = Location::new(rng.random::<f64>() * s.area, rng.random::<f64>() * s.area);
            let in_patch = loc.x <= s.patch_scale && loc.y <= s.patch_scale;
            if s.complement == Complement::FullArea || !in_patch {
                return loc;
            }
        }
    }

    /// Samples a location whose nearest station is `station`, by rejection
    /// from the mixture. Falls back to the uniform area and finally to the
    /// station itself if the cell carries (almost) no mass.
    pub fn sample_in_cell<R: Rng + ?Sized>(&self, stations: &[Location], station: usize, rng: &mut R) -> Location {
        const TRIES: usize = 20_000;
        for _ in 0..TRIES {
            let loc = self.sample(rng);
            if nearest_index(&loc, stations) == station {
                return loc;
            }
        }
        let area = self.mixture.area;
        for _ in 0..TRIES {
            let loc = Location::new(rng.random::<f64>() * area, rng.random::<f64>() * area);
            if nearest_index(&loc, stations) == station {
                return loc;
            }
        }
        stations[station]
    }
}

/// Draws one customer location from the mixture.
pub fn sample_location<R: Rng + ?Sized>(spatial: &SpatialDemand, rng: &mut R) -> Result<Location> {
    Ok(spatial.sampler()?.sample(rng))
}

fn nearest_index(loc: &Location, stations: &[Location]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, s) in stations.iter().enumerate() {
        let d = loc.distance_squared(s);
        if d < best_d {
            best = i;
            best_d = d;
        }
    }
    best
}

/// Euclidean nearest station; lowest index wins ties.
pub fn nearest_station(location: &Location, stations: &[Location]) -> Result<usize> {
    if stations.is_empty() {
        return Err(Error::param("no stations"));
    }
    Ok(nearest_index(location, stations))
}

/// Monte Carlo fraction of customers whose nearest station is each station.
pub fn station_shares<R: Rng + ?Sized>(
    spatial: &SpatialDemand,
    stations: &[Location],
    n_samples: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    Ok(station_counts(spatial, stations, n_samples, rng)?
        .into_iter()
        .map(|c| c as f64 / n_samples as f64)
        .collect())
}

/// Minimum sample size accepted by [`station_shares`].
pub const MIN_SHARE_SAMPLES: usize = 10_000;

/// Per-station counts behind [`station_shares`]; they partition `n_samples`.
pub fn station_counts<R: Rng + ?Sized>(
    spatial: &SpatialDemand,
    stations: &[Location],
    n_samples: usize,
    rng: &mut R,
) -> Result<Vec<usize>> {
    if stations.is_empty() {
        return Err(Error::param("no stations"));
    }
    if n_samples < MIN_SHARE_SAMPLES {
        return Err(Error::param(format!(
            "need at least {MIN_SHARE_SAMPLES} samples, got {n_samples}"
        )));
    }
    let sampler = spatial.sampler()?;
    let mut counts = vec![0usize; stations.len()];
    for _ in 0..n_samples {
        counts[nearest_index(&sampler.sample(rng), stations)] += 1;
    }
    Ok(counts)
}

/// Total network request rate over time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DemandProfile {
    Constant {
        rate: f64,
    },
    /// `base + amplitude·sin(2π(t − phase)/period)`.
    Sine {
        base: f64,
        amplitude: f64,
        period: f64,
        #[serde(default)]
        phase: f64,
    },
    /// Piecewise-constant table, one entry per `step` time units, repeating.
    Table {
        rates: Vec<f64>,
        #[serde(default = "default_step")]
        step: f64,
    },
}

fn default_step() -> f64 {
    1.0
}

const DAILY_TABLE: &str = include_str!("../assets/daily_demand.csv");

/// The shipped hourly network demand curve.
pub fn daily_table() -> Vec<f64> {
    DAILY_TABLE
        .lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .filter_map(|l| l.split(',').nth(1))
        .map(|v| v.trim().parse().expect("bundled demand table is well formed"))
        .collect()
}

impl DemandProfile {
    pub fn daily() -> Self {
        DemandProfile::Table {
            rates: daily_table(),
            step: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            DemandProfile::Constant { rate } => {
                if !(rate.is_finite() && *rate >= 0.0) {
                    return Err(Error::param(format!("constant rate must be >= 0, got {rate}")));
                }
            }
            DemandProfile::Sine {
                base,
                amplitude,
                period,
                phase,
            } => {
                if ![base, amplitude, period, phase].iter().all(|v| v.is_finite()) || *period <= 0.0 {
                    return Err(Error::param("sine profile needs finite parameters and period > 0"));
                }
                if base - amplitude.abs() < 0.0 {
                    return Err(Error::param(format!(
                        "sine profile goes negative: base {base} < |amplitude| {amplitude}"
                    )));
                }
            }
            DemandProfile::Table { rates, step } => {
                if rates.is_empty() || !(step.is_finite() && *step > 0.0) {
                    return Err(Error::param("table profile needs at least one rate and step > 0"));
                }
                if let Some((i, r)) = rates.iter().enumerate().find(|(_, r)| !(r.is_finite() && **r >= 0.0)) {
                    return Err(Error::param(format!("table entry {i} is negative or non-finite: {r}")));
                }
            }
        }
        Ok(())
    }

    /// Total request rate at time `t`.
    pub fn rate_at(&self, t: f64) -> f64 {
        match self {
            DemandProfile::Constant { rate } => *rate,
            DemandProfile::Sine {
                base,
                amplitude,
                period,
                phase,
            } => base + amplitude * (std::f64::consts::TAU * (t - phase) / period).sin(),
            DemandProfile::Table { rates, step } => {
                let slot = (t / step).floor().rem_euclid(rates.len() as f64) as usize;
                rates[slot.min(rates.len() - 1)]
            }
        }
    }

    /// Supremum of the rate, used as the thinning majorant.
    pub fn max_rate(&self) -> f64 {
        match self {
            DemandProfile::Constant { rate } => *rate,
            DemandProfile::Sine { base, amplitude, .. } => base + amplitude.abs(),
            DemandProfile::Table { rates, .. } => rates.iter().copied().fold(0.0, f64::max),
        }
    }
}

/// Total rate at `t` split across stations by `shares`.
pub fn station_rates_at(profile: &DemandProfile, shares: &[f64], t: f64) -> Vec<f64> {
    let total = profile.rate_at(t);
    shares.iter().map(|s| total * s).collect()
}

/// Evaluates a profile.
pub fn rate_at(profile: &DemandProfile, t: f64) -> f64 {
    profile.rate_at(t)
}

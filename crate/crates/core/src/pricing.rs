//! Admission-control pricing block.
//!
//! Each station watches its effective request rate `λ̃ = λ_EV + λ_BL + λ_RB`.
//! Below the admissible threshold `λ*` it charges the normal price and every
//! customer accepts. Above it the station quotes a congestion price and only
//! the fraction `λ*/λ̃` of customers accepts, which throttles the admitted
//! stream back to the QoS-safe rate.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::station::{blocking_probability, StationConfig};

/// Share of blocked customers that come back for another attempt.
pub const DEFAULT_RETRY_FRACTION: f64 = 1.0 / 3.0;

/// Mean delay before a blocked customer retries, in hours.
pub const DEFAULT_RETRY_MEAN_DELAY: f64 = 0.25;

/// Per-station request streams, all in arrivals per unit time.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ArrivalStreams {
    /// Fresh requests from customers for whom this is the nearest station.
    pub lambda_ev: f64,
    /// Retrying customers blocked here as locals.
    pub lambda_bl: f64,
    /// Retrying customers blocked here after being routed in.
    pub lambda_rb: f64,
    /// Customers routed in from neighbouring stations.
    pub lambda_r: f64,
    /// Customers who accepted the quoted price.
    pub lambda_ac: f64,
    /// Customers admitted to service.
    pub lambda_ad: f64,
}

impl ArrivalStreams {
    pub fn new(lambda_ev: f64, lambda_bl: f64, lambda_rb: f64) -> Self {
        Self {
            lambda_ev,
            lambda_bl,
            lambda_rb,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            self.lambda_ev,
            self.lambda_bl,
            self.lambda_rb,
            self.lambda_r,
            self.lambda_ac,
            self.lambda_ad,
        ];
        if all.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
            return Err(Error::param("arrival streams must be finite and nonnegative"));
        }
        if self.lambda_ac > self.effective_rate() * (1.0 + 1e-12) {
            return Err(Error::param(format!(
                "accepting stream {} exceeds the effective rate {}",
                self.lambda_ac,
                self.effective_rate()
            )));
        }
        Ok(())
    }

    pub fn effective_rate(&self) -> f64 {
        self.lambda_ev + self.lambda_bl + self.lambda_rb
    }
}

/// `λ̃ = λ_EV + λ_BL + λ_RB`.
pub fn effective_rate(streams: &ArrivalStreams) -> f64 {
    streams.effective_rate()
}

fn check_threshold(threshold: f64) -> Result<()> {
    if !(threshold.is_finite() && threshold > 0.0) {
        return Err(Error::param(format!("admissible rate must be > 0, got {threshold}")));
    }
    Ok(())
}

/// Fraction of customers accepting the quoted price: 1 while uncongested,
/// `λ*/λ̃` otherwise.
pub fn acceptance_fraction(effective: f64, threshold: f64) -> Result<f64> {
    check_threshold(threshold)?;
    if effective <= threshold {
        Ok(1.0)
    } else {
        Ok(threshold / effective)
    }
}

/// Load term inside the demand-function inverse. Natural log.
fn load_log(effective: f64, threshold: f64) -> f64 {
    (effective / threshold).ln()
}

/// The congestion-branch price `p_normal·(1 + θ·√(−log(λ*/λ̃)))`, evaluated
/// for any `λ̃ ≥ λ*`.
pub fn congestion_branch(effective: f64, threshold: f64, price_normal: f64, theta: f64) -> f64 {
    let surcharge = load_log(effective, threshold).max(0.0).sqrt();
    price_normal * (1.0 + theta * surcharge)
}

/// Price quoted at a given load.
pub fn congestion_price(effective: f64, threshold: f64, price_normal: f64, theta: f64) -> Result<f64> {
    check_threshold(threshold)?;
    if !(theta.is_finite() && theta >= 0.0) {
        return Err(Error::param(format!("theta must be >= 0, got {theta}")));
    }
    if effective <= threshold {
        Ok(price_normal)
    } else {
        Ok(congestion_branch(effective, threshold, price_normal, theta))
    }
}

/// A station's current quote.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriceSignal {
    pub station: usize,
    pub price: f64,
    pub congested: bool,
    pub effective_rate: f64,
}

impl PriceSignal {
    pub fn quote(station: usize, effective: f64, threshold: f64, price_normal: f64, theta: f64) -> Result<Self> {
        Ok(Self {
            station,
            price: congestion_price(effective, threshold, price_normal, theta)?,
            congested: effective > threshold,
            effective_rate: effective,
        })
    }
}

/// Retry streams generated by blocked locals and blocked routed customers.
pub fn retry_streams(blocked_local: f64, blocked_routed: f64, retry_fraction: f64) -> Result<(f64, f64)> {
    if !(0.0..=1.0).contains(&retry_fraction) {
        return Err(Error::param(format!(
            "retry fraction must be in [0, 1], got {retry_fraction}"
        )));
    }
    if !(blocked_local >= 0.0 && blocked_routed >= 0.0) {
        return Err(Error::param("blocked rates must be nonnegative"));
    }
    Ok((retry_fraction * blocked_local, retry_fraction * blocked_routed))
}

/// Fixed operating costs per unit time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StationCosts {
    /// Per storage unit held.
    pub storage_unit: f64,
    /// Per grid slot contracted.
    pub grid_slot: f64,
}

impl Default for StationCosts {
    /// Calibration values, not measured data: chosen so a five-slot,
    /// five-unit station loses money below two arrivals per unit time.
    fn default() -> Self {
        Self {
            storage_unit: 0.8,
            grid_slot: 1.2,
        }
    }
}

impl StationCosts {
    pub fn fixed(&self, cfg: &StationConfig) -> f64 {
        self.storage_unit * f64::from(cfg.storage_units) + self.grid_slot * f64::from(cfg.grid_slots)
    }
}

/// Expected profit per unit time at arrival rate `λ`:
/// `p_normal·λ·(1 − B) − p_B·λ·B − fixed costs`.
pub fn expected_profit(cfg: &StationConfig, arrival_rate: f64, costs: &StationCosts) -> Result<f64> {
    if !(arrival_rate.is_finite() && arrival_rate >= 0.0) {
        return Err(Error::param(format!("arrival rate must be >= 0, got {arrival_rate}")));
    }
    let b = if arrival_rate == 0.0 {
        0.0
    } else {
        blocking_probability(cfg, arrival_rate)?
    };
    Ok(profit_at(
        arrival_rate,
        b,
        cfg.price_normal,
        cfg.price_block_penalty,
        costs.fixed(cfg),
    ))
}

/// The profit formula for a given blocking probability.
pub fn profit_at(arrival_rate: f64, blocking: f64, price_normal: f64, block_penalty: f64, fixed_cost: f64) -> f64 {
    price_normal * arrival_rate * (1.0 - blocking) - block_penalty * arrival_rate * blocking - fixed_cost
}

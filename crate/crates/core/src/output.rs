//! Metric files.
//!
//! Every CSV starts with a `# schema: <name> v<N>` comment line followed by a
//! header row. Rows are written in a fixed order and floats use the shortest
//! round-trip representation, so identical metrics give identical bytes.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::sim::{Estimate, SimMetrics, WindowStats};

pub const SCHEMA_VERSION: u32 = 1;

/// Writes the schema comment line, then `rows` as CSV with a header.
pub fn write_csv<W: Write, T: Serialize>(mut out: W, schema: &str, rows: &[T]) -> Result<()> {
    writeln!(out, "# schema: {schema} v{SCHEMA_VERSION}")?;
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

/// Per-station, per-window aggregate over replications. Rates are per unit
/// time; counts are per replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowRow {
    pub window: usize,
    pub t_start: f64,
    pub station: usize,
    pub lambda_ev: f64,
    pub lambda_ac: f64,
    pub lambda_r: f64,
    pub lambda_bl: f64,
    pub lambda_rb: f64,
    pub lambda_ad: f64,
    pub b_ev: Option<f64>,
    pub b_rb: Option<f64>,
    pub p_bt: f64,
    pub p_bt_estimate: f64,
    pub price: f64,
    pub congested_fraction: f64,
    pub served_mean: f64,
    pub served_sd: f64,
    pub blocked_mean: f64,
    pub blocked_sd: f64,
    pub balked_mean: f64,
    pub revenue_mean: f64,
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

pub fn window_rows(m: &SimMetrics) -> Vec<WindowRow> {
    let reps = m.replications.len();
    let scale = m.window * reps as f64;
    let mut rows = Vec::with_capacity(m.n_windows() * m.n_stations());
    for w in 0..m.n_windows() {
        for s in 0..m.n_stations() {
            let cells: Vec<&WindowStats> = m.replications.iter().map(|r| &r.windows[w][s]).collect();
            let mut pooled = WindowStats::default();
            for c in &cells {
                pooled.accumulate(c);
            }
            let per_rep = |f: fn(&WindowStats) -> f64| {
                let xs: Vec<f64> = cells.iter().map(|c| f(c)).collect();
                Estimate::from_samples(&xs)
            };
            let served = per_rep(|c| c.served as f64);
            let blocked = per_rep(|c| c.blocked() as f64);
            rows.push(WindowRow {
                window: w,
                t_start: w as f64 * m.window,
                station: s,
                lambda_ev: pooled.fresh as f64 / scale,
                lambda_ac: pooled.attempts_local as f64 / scale,
                lambda_r: pooled.routed_in as f64 / scale,
                lambda_bl: pooled.retry_local as f64 / scale,
                lambda_rb: pooled.retry_routed as f64 / scale,
                lambda_ad: pooled.served as f64 / scale,
                b_ev: ratio(pooled.blocked_local, pooled.attempts_local),
                b_rb: ratio(pooled.blocked_routed, pooled.attempts_routed),
                p_bt: pooled.p_bt(m.weights),
                p_bt_estimate: per_rep(|c| c.p_bt_estimate).mean,
                price: per_rep(|c| c.price).mean,
                congested_fraction: per_rep(|c| f64::from(u8::from(c.congested))).mean,
                served_mean: served.mean,
                served_sd: served.sd,
                blocked_mean: blocked.mean,
                blocked_sd: blocked.sd,
                balked_mean: per_rep(|c| c.balked as f64).mean,
                revenue_mean: per_rep(|c| c.revenue).mean,
            });
        }
    }
    rows
}

pub fn write_window_csv<W: Write>(out: W, m: &SimMetrics) -> Result<()> {
    write_csv(out, "window-metrics", &window_rows(m))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationSummary {
    pub station: usize,
    pub grid_slots: u32,
    pub storage_units: u32,
    pub admissible_rate: f64,
    pub served: Estimate,
    pub blocking: Estimate,
    pub p_bt: Estimate,
    pub arrivals: f64,
    pub balked: f64,
    pub routed_in: f64,
    pub routed_out: f64,
}

/// Whole-run summary after the warm-up.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub schema_version: u32,
    pub scenario: String,
    pub tier: String,
    pub seed: u64,
    pub replications: usize,
    pub horizon: f64,
    pub window: f64,
    pub warmup: f64,
    pub stations: Vec<StationSummary>,
    pub served: Estimate,
    pub revenue: Estimate,
    pub weighted_blocking: Option<f64>,
    /// Mean routed customers, `routed[from][to]`.
    pub routed: Vec<Vec<f64>>,
}

pub fn run_summary(m: &SimMetrics, warmup: f64) -> RunSummary {
    let range = m.windows_between(warmup, m.horizon);
    let reps = m.replications.len().max(1) as f64;
    let pooled = m.pooled_totals(range.clone());
    let blocking = m.blocking(range.clone());
    let p_bt = m.p_bt(range.clone());
    let served = m.station_served(range.clone());
    let stations = (0..m.n_stations())
        .map(|s| StationSummary {
            station: s,
            grid_slots: m.slots[s],
            storage_units: m.storage[s],
            admissible_rate: m.thresholds[s],
            served: served[s],
            blocking: blocking[s],
            p_bt: p_bt[s],
            arrivals: pooled[s].arrivals() as f64 / reps,
            balked: pooled[s].balked as f64 / reps,
            routed_in: pooled[s].routed_in as f64 / reps,
            routed_out: pooled[s].routed_out as f64 / reps,
        })
        .collect();
    RunSummary {
        schema_version: SCHEMA_VERSION,
        scenario: m.scenario.clone(),
        tier: m.tier.to_string(),
        seed: m.seed,
        replications: m.replications.len(),
        horizon: m.horizon,
        window: m.window,
        warmup,
        stations,
        served: m.served(range.clone()),
        revenue: m.revenue(range.clone()),
        weighted_blocking: m.weighted_blocking(range),
        routed: m.routed_matrix(),
    }
}

pub fn write_summary_json<W: Write>(out: W, summary: &RunSummary) -> Result<()> {
    serde_json::to_writer_pretty(out, summary)?;
    Ok(())
}

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use anyhow::{anyhow, Context};
use evac_core::demand::station_rates_at;
use evac_core::game::TuningMode;
use evac_core::output::{run_summary, write_csv, write_summary_json, write_window_csv};
use evac_core::pricing::{expected_profit, StationCosts};
use evac_core::scenario::PRESETS;
use evac_core::sim::{compare_tiers, scenario_shares};
use evac_core::{
    allocate, blocking_probability, preset, run_simulation, tune_theta, NetworkScenario, NetworkTopology, StationConfig,
};
use log::info;
use serde::Serialize;

use crate::{
    AllocateArgs, Command, CompareArgs, Failure, Format, GridArgs, ModeArg, OutputArgs, ProfitArgs, RunArgs,
    ScenarioArgs, SweepArgs,
};

type Outcome = Result<(), Failure>;

trait InputContext<T> {
    fn input(self) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> InputContext<T> for Result<T, E> {
    fn input(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::Input(e.into()))
    }
}

pub fn dispatch(command: Command) -> Outcome {
    match command {
        Command::BlockingGrid(a) => blocking_grid(a),
        Command::ProfitCurve(a) => profit_curve(a),
        Command::Run(a) => run(a),
        Command::Allocate(a) => allocate_cmd(a),
        Command::ThetaSweep(a) => theta_sweep(a),
        Command::Compare(a) => compare(a),
    }
}

/// A path if one exists there, otherwise a preset name.
pub fn load_scenario(name: &str) -> Result<NetworkScenario, Failure> {
    let path = Path::new(name);
    if path.exists() {
        return NetworkScenario::load(path).input();
    }
    if PRESETS.contains(&name) {
        return preset(name).input();
    }
    Err(Failure::Input(anyhow!(
        "no scenario file {name:?} and no preset by that name (presets: {})",
        PRESETS.join(", ")
    )))
}

fn scenario_with_overrides(args: &ScenarioArgs) -> Result<NetworkScenario, Failure> {
    let mut s = load_scenario(&args.scenario)?;
    if let Some(t) = args.tier {
        s.tier = t.into();
    }
    if let Some(seed) = args.seed {
        s.run.seed = seed;
    }
    if let Some(n) = args.replications {
        s.run.replications = n;
    }
    if let Some(h) = args.horizon {
        s.run.horizon = h;
    }
    s.validate().context("after applying command-line overrides").input()?;
    Ok(s)
}

fn sink(output: &OutputArgs, stem: &str) -> Result<Box<dyn Write>, Failure> {
    match &output.out {
        None => Ok(Box::new(io::stdout().lock())),
        Some(dir) => {
            std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
            let ext = match output.format {
                Format::Csv => "csv",
                Format::Json => "json",
            };
            let path = dir.join(format!("{stem}.{ext}"));
            let file = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
            info!("writing {}", path.display());
            Ok(Box::new(BufWriter::new(file)))
        }
    }
}

fn emit<T: Serialize>(output: &OutputArgs, stem: &str, schema: &str, rows: &[T]) -> Outcome {
    let mut out = sink(output, stem)?;
    match output.format {
        Format::Csv => write_csv(&mut out, schema, rows)?,
        Format::Json => {
            serde_json::to_writer_pretty(&mut out, rows).map_err(anyhow::Error::from)?;
            writeln!(out).map_err(anyhow::Error::from)?;
        }
    }
    out.flush().map_err(anyhow::Error::from)?;
    Ok(())
}

impl From<evac_core::Error> for Failure {
    fn from(e: evac_core::Error) -> Self {
        match e {
            evac_core::Error::Scenario { .. } => Failure::Input(e.into()),
            other => Failure::Runtime(other.into()),
        }
    }
}

#[derive(Serialize)]
struct GridRow {
    slots: u32,
    storage: u32,
    rate: f64,
    blocking: f64,
}

fn blocking_grid(a: GridArgs) -> Outcome {
    let rates = a.rates.values();
    if rates.first().is_some_and(|r| *r <= 0.0) {
        return Err(Failure::Input(anyhow!("arrival rates must be > 0")));
    }
    let mut rows = Vec::new();
    for s in a.slots.values() {
        for r in a.storage.values() {
            let cfg = StationConfig::with_capacity(s, r, a.charge_rate, a.recharge_rate);
            cfg.validate().input()?;
            for &rate in &rates {
                rows.push(GridRow {
                    slots: s,
                    storage: r,
                    rate,
                    blocking: blocking_probability(&cfg, rate)?,
                });
            }
        }
    }
    emit(&a.output, "blocking-grid", "blocking-grid", &rows)
}

#[derive(Serialize)]
struct ProfitRow {
    rate: f64,
    blocking: f64,
    profit: f64,
}

fn profit_curve(a: ProfitArgs) -> Outcome {
    let s = load_scenario(&a.scenario)?;
    let mut cfg = s.stations.get(a.station).cloned().ok_or_else(|| {
        Failure::Input(anyhow!(
            "station {} out of range ({} stations)",
            a.station,
            s.stations.len()
        ))
    })?;
    if let Some(p) = a.price_normal {
        cfg.price_normal = p;
    }
    if let Some(p) = a.block_penalty {
        cfg.price_block_penalty = p;
    }
    cfg.validate().input()?;
    let mut costs = StationCosts::default();
    if let Some(c) = a.storage_cost {
        costs.storage_unit = c;
    }
    if let Some(c) = a.slot_cost {
        costs.grid_slot = c;
    }
    let rows = a
        .rates
        .values()
        .into_iter()
        .map(|rate| {
            let blocking = if rate > 0.0 {
                blocking_probability(&cfg, rate)?
            } else {
                0.0
            };
            Ok(ProfitRow {
                rate,
                blocking,
                profit: expected_profit(&cfg, rate, &costs)?,
            })
        })
        .collect::<Result<Vec<_>, evac_core::Error>>()?;
    emit(&a.output, "profit-curve", "profit-curve", &rows)
}

fn run(a: RunArgs) -> Outcome {
    let s = scenario_with_overrides(&a.scenario)?;
    let r = &s.run;
    info!(
        "running {} tier {} seed {} for {} h x {} replications",
        s.name, s.tier, r.seed, r.horizon, r.replications
    );
    let m = run_simulation(&s, s.tier, r.seed, r.horizon, r.replications)?;
    let summary = run_summary(&m, r.warmup);
    let write = |format: Format| -> Outcome {
        let output = OutputArgs {
            out: a.output.out.clone(),
            format,
        };
        let stem = match format {
            Format::Csv => "windows",
            Format::Json => "summary",
        };
        let mut out = sink(&output, stem)?;
        match format {
            Format::Csv => write_window_csv(&mut out, &m)?,
            Format::Json => {
                write_summary_json(&mut out, &summary)?;
                writeln!(out).map_err(anyhow::Error::from)?;
            }
        }
        out.flush().map_err(anyhow::Error::from)?;
        Ok(())
    };
    if a.output.out.is_some() {
        write(Format::Csv)?;
        write(Format::Json)?;
    } else {
        write(a.output.format)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct AllocationRow {
    station: usize,
    rate: f64,
    desired: u32,
    phase1: u32,
    granted: u32,
    slots: u32,
    blocking: f64,
}

fn allocate_cmd(a: AllocateArgs) -> Outcome {
    let s = load_scenario(&a.scenario)?;
    let at = a.at.unwrap_or(s.demand.allocation_time);
    let shares = scenario_shares(&s)?;
    let rates = station_rates_at(&s.demand.profile, &shares, at);
    let topology: NetworkTopology = s.network_topology()?;
    let report = allocate(&topology, &rates)?;
    info!(
        "excess {} slots, {} redistributed, {} unassigned",
        report.excess,
        report.phase2.granted(),
        report.unassigned
    );
    if a.output.format == Format::Json {
        let mut out = sink(&a.output, "allocation")?;
        serde_json::to_writer_pretty(&mut out, &report).map_err(anyhow::Error::from)?;
        writeln!(out).map_err(anyhow::Error::from)?;
        out.flush().map_err(anyhow::Error::from)?;
        return Ok(());
    }
    let rows: Vec<AllocationRow> = (0..rates.len())
        .map(|i| AllocationRow {
            station: i,
            rate: rates[i],
            desired: report.phase1.desired[i],
            phase1: report.phase1.slots[i],
            granted: report
                .phase2
                .grants
                .iter()
                .filter(|g| g.recipient == i)
                .map(|g| g.amount)
                .sum(),
            slots: report.slots()[i],
            blocking: report.blocking_after[i],
        })
        .collect();
    emit(&a.output, "allocation", "allocation", &rows)
}

#[derive(Serialize)]
struct SweepRow {
    theta: f64,
    station: usize,
    p_bt: f64,
    routed_out: f64,
    balked: f64,
    revenue: f64,
}

fn theta_sweep(a: SweepArgs) -> Outcome {
    let mut s = scenario_with_overrides(&a.scenario)?;
    if let Some(t) = a.constant_at {
        s = s.at_constant_rate(t);
    }
    if let Some(w) = a.warmup {
        s.run.warmup = w;
        s.validate().input()?;
    }
    let grid = if a.grid.is_empty() {
        s.game.theta_grid.clone()
    } else {
        a.grid.clone()
    };
    if let Some(bad) = grid.iter().find(|t| !(t.is_finite() && **t >= 0.0)) {
        return Err(Failure::Input(anyhow!(
            "theta values must be finite and >= 0, got {bad}"
        )));
    }
    let mode = match a.mode {
        ModeArg::MaxPayoff => TuningMode::MaxPayoff,
        ModeArg::MinBlocking => TuningMode::MinBlocking,
    };
    let tuning = tune_theta(&s, &grid, mode)?;
    info!("best θ = {} for stations {:?}", tuning.best, tuning.tuned_stations);
    if a.output.format == Format::Json {
        let mut out = sink(&a.output, "theta-sweep")?;
        serde_json::to_writer_pretty(&mut out, &tuning).map_err(anyhow::Error::from)?;
        writeln!(out).map_err(anyhow::Error::from)?;
        out.flush().map_err(anyhow::Error::from)?;
        return Ok(());
    }
    let rows: Vec<SweepRow> = tuning
        .curve
        .iter()
        .flat_map(|p| {
            (0..p.p_bt.len()).map(move |i| SweepRow {
                theta: p.theta,
                station: i,
                p_bt: p.p_bt[i],
                routed_out: p.routed_out[i],
                balked: p.balked[i],
                revenue: p.revenue,
            })
        })
        .collect();
    emit(&a.output, "theta-sweep", "theta-sweep", &rows)
}

#[derive(Serialize)]
struct CompareRow {
    hour: usize,
    tier: String,
    served_mean: f64,
    served_sd: f64,
    revenue_mean: f64,
    weighted_blocking: Option<f64>,
    served_increase_pct: Option<f64>,
}

fn compare(a: CompareArgs) -> Outcome {
    let s = scenario_with_overrides(&a.scenario)?;
    let cmp = compare_tiers(&s, s.run.seed)?;
    if a.output.format == Format::Json {
        let mut out = sink(&a.output, "compare")?;
        serde_json::to_writer_pretty(&mut out, &cmp).map_err(anyhow::Error::from)?;
        writeln!(out).map_err(anyhow::Error::from)?;
        out.flush().map_err(anyhow::Error::from)?;
        return Ok(());
    }
    let rows: Vec<CompareRow> = cmp
        .rows
        .iter()
        .map(|r| CompareRow {
            hour: r.hour,
            tier: r.tier.to_string(),
            served_mean: r.served.mean,
            served_sd: r.served.sd,
            revenue_mean: r.revenue.mean,
            weighted_blocking: r.weighted_blocking,
            served_increase_pct: cmp.served_increase_pct.get(r.hour).copied().flatten(),
        })
        .collect();
    emit(&a.output, "compare", "tier-comparison", &rows)
}

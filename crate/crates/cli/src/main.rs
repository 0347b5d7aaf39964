//! `evac`: command-line front end for the charging-network models.

mod commands;
mod ranges;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use evac_core::ScenarioTier;

use crate::ranges::{FloatRange, IntRange};

#[derive(Parser, Debug)]
#[command(
    name = "evac",
    version,
    about = "Admission control and pricing for EV fast-charging networks"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Analytic blocking probability over a grid of slots, storage and load.
    BlockingGrid(GridArgs),
    /// Expected single-station profit as a function of the arrival rate.
    ProfitCurve(ProfitArgs),
    /// Simulate a scenario and write per-window metrics and a summary.
    Run(RunArgs),
    /// Two-phase grid-slot allocation for a scenario.
    Allocate(AllocateArgs),
    /// Sweep the congestion-price sensitivity and report blocking and revenue.
    ThetaSweep(SweepArgs),
    /// Run all three tiers on common random numbers and tabulate them by hour.
    Compare(CompareArgs),
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum TierArg {
    Baseline,
    #[value(alias = "allocation-only")]
    Allocation,
    #[value(alias = "full-control")]
    Full,
}

impl From<TierArg> for ScenarioTier {
    fn from(t: TierArg) -> Self {
        match t {
            TierArg::Baseline => ScenarioTier::Baseline,
            TierArg::Allocation => ScenarioTier::AllocationOnly,
            TierArg::Full => ScenarioTier::FullControl,
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    MaxPayoff,
    MinBlocking,
}

/// Where results go.
#[derive(Args, Debug, Clone)]
pub struct OutputArgs {
    /// Directory for output files; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "csv")]
    pub format: Format,
}

/// Scenario selection plus run overrides.
#[derive(Args, Debug, Clone)]
pub struct ScenarioArgs {
    /// Scenario TOML file or preset name (paper-network, paper-single-sine, erlang-check).
    #[arg(long, default_value = "paper-network")]
    pub scenario: String,
    #[arg(long, value_enum)]
    pub tier: Option<TierArg>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub replications: Option<usize>,
    /// Simulated hours.
    #[arg(long)]
    pub horizon: Option<f64>,
}

#[derive(Args, Debug)]
pub struct GridArgs {
    /// Grid slots, `N` or `LO:HI`.
    #[arg(long, default_value = "1:10")]
    pub slots: IntRange,
    /// Storage units, `N` or `LO:HI`.
    #[arg(long, default_value = "0:8")]
    pub storage: IntRange,
    /// Arrival rates, `X` or `LO:HI:STEP`.
    #[arg(long, default_value = "1:20:1")]
    pub rates: FloatRange,
    #[arg(long, default_value_t = 2.0)]
    pub charge_rate: f64,
    #[arg(long, default_value_t = 4.0)]
    pub recharge_rate: f64,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Args, Debug)]
pub struct ProfitArgs {
    #[arg(long, default_value = "paper-single-sine")]
    pub scenario: String,
    /// Index of the station to evaluate.
    #[arg(long, default_value_t = 0)]
    pub station: usize,
    #[arg(long, default_value = "0:20:0.25")]
    pub rates: FloatRange,
    #[arg(long)]
    pub price_normal: Option<f64>,
    #[arg(long)]
    pub block_penalty: Option<f64>,
    /// Cost per storage unit per hour.
    #[arg(long)]
    pub storage_cost: Option<f64>,
    /// Cost per grid slot per hour.
    #[arg(long)]
    pub slot_cost: Option<f64>,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Args, Debug)]
pub struct RunArgs {
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Args, Debug)]
pub struct AllocateArgs {
    #[arg(long, default_value = "paper-network")]
    pub scenario: String,
    /// Hour whose demand is used; defaults to the scenario's allocation time.
    #[arg(long)]
    pub at: Option<f64>,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    /// Comma-separated θ values; defaults to the scenario grid.
    #[arg(long, value_delimiter = ',')]
    pub grid: Vec<f64>,
    #[arg(long, value_enum, default_value = "max-payoff")]
    pub mode: ModeArg,
    /// Replace the demand profile by its constant value at this hour.
    #[arg(long)]
    pub constant_at: Option<f64>,
    /// Discard windows before this hour.
    #[arg(long)]
    pub warmup: Option<f64>,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Args, Debug)]
pub struct CompareArgs {
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    #[command(flatten)]
    pub output: OutputArgs,
}

/// Failure classes, mapped to exit codes.
#[derive(Debug)]
pub enum Failure {
    /// Unreadable, unparseable or invalid input.
    Input(anyhow::Error),
    /// Anything that went wrong after the input was accepted.
    Runtime(anyhow::Error),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Input(_) => 2,
            Failure::Runtime(_) => 3,
        }
    }

    fn error(&self) -> &anyhow::Error {
        match self {
            Failure::Input(e) | Failure::Runtime(e) => e,
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

/// A reader such as `head` went away; not worth an error.
fn closed_pipe(e: &anyhow::Error) -> bool {
    e.chain().any(|c| {
        let io = c
            .downcast_ref::<std::io::Error>()
            .or_else(|| match c.downcast_ref::<evac_core::Error>() {
                Some(evac_core::Error::Io(io)) => Some(io),
                _ => None,
            });
        io.is_some_and(|io| io.kind() == std::io::ErrorKind::BrokenPipe)
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match commands::dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) if closed_pipe(f.error()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error());
            ExitCode::from(f.code())
        }
    }
}

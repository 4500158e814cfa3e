mod artifacts;
mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use chrono::{DateTime, Utc};
use clap::{Args, Parser, Subcommand, ValueEnum};
use holdwise::prep::Split;

pub const EXIT_BAD_INPUT: u8 = 2;
pub const EXIT_NUMERICAL: u8 = 3;

/// Probabilistic bus travel-time forecasting and transfer holding workbench.
#[derive(Debug, Parser)]
#[command(name = "holdwise", version)]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Global {
    /// Root of the content-addressed artifact tree.
    #[arg(long, global = true, env = "HOLDWISE_ARTIFACTS", default_value = "artifacts")]
    pub artifacts: PathBuf,
    /// JSON run configuration; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Monte Carlo sample count.
    #[arg(long, global = true)]
    pub samples: Option<usize>,
    /// Rerun even when an identical run already finished.
    #[arg(long, global = true)]
    pub force: bool,
    /// Write into this directory instead of the artifact tree.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Repeat for more log output.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModelKind {
    Dqr,
    Brnn,
    Kalman,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TunableKind {
    Dqr,
    Brnn,
}

/// Which window of the prepared data to forecast from.
#[derive(Debug, Clone, Args)]
pub struct WindowSelect {
    #[arg(long, default_value = "test")]
    pub split: Split,
    /// Window index within the split.
    #[arg(long, conflicts_with = "at")]
    pub window: Option<usize>,
    /// First forecast step, as an RFC 3339 timestamp.
    #[arg(long)]
    pub at: Option<DateTime<Utc>>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic observation set with known conditional quantiles.
    Synth {
        /// Also write a synthetic transfer scenario (pairs and forecast samples).
        #[arg(long)]
        journeys: bool,
    },
    /// Snap observations to the grid, standardize and fold into windows.
    Prepare {
        /// CSV with `link_id,observed_at,travel_time_s`.
        input: PathBuf,
        /// Train, validation and test weeks, e.g. `13,2,2`.
        #[arg(long, value_delimiter = ',')]
        split: Option<Vec<usize>>,
    },
    /// Train a model on a prepared directory.
    Train {
        model: ModelKind,
        #[arg(long)]
        data: PathBuf,
    },
    /// Per-link point forecasts and central intervals.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        select: WindowSelect,
        /// Central interval coverage as a fraction.
        #[arg(long, default_value_t = 0.9)]
        coverage: f64,
    },
    /// Fit one Gaussian per link and horizon to the quantile forecasts.
    FitGaussians {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        select: WindowSelect,
    },
    /// Monte Carlo route travel-time samples for one prediction time.
    Aggregate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        select: WindowSelect,
        /// Link ids along the route; every link when omitted.
        #[arg(long, value_delimiter = ',')]
        route: Vec<String>,
        /// Horizon of the first link, 1 for t+1.
        #[arg(long, default_value_t = 1)]
        start_horizon: usize,
    },
    /// Route-level ICP, MIL and RMSE report for one or more checkpoints.
    Evaluate {
        #[arg(long, required = true)]
        model: Vec<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "test")]
        split: Split,
    },
    /// Replay a holding policy and its baselines over transfer pairs.
    SimulateTransfer(SimulateArgs),
    /// Random hyper-parameter search.
    Hpo {
        model: TunableKind,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        max_seconds: Option<f64>,
    },
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    /// Use the built-in synthetic journey scenario.
    #[arg(long, conflicts_with = "pairs")]
    pub fixture: bool,
    #[arg(long)]
    pub pairs: Option<PathBuf>,
    /// Precomputed `pair_id,role,travel_time_s` samples.
    #[arg(long, conflicts_with_all = ["feeder_model", "receiver_model"])]
    pub pair_samples: Option<PathBuf>,
    #[arg(long, requires_all = ["feeder_data", "feeder_route"])]
    pub feeder_model: Option<PathBuf>,
    #[arg(long)]
    pub feeder_data: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    pub feeder_route: Option<Vec<String>>,
    #[arg(long, requires_all = ["receiver_data", "receiver_route"])]
    pub receiver_model: Option<PathBuf>,
    #[arg(long)]
    pub receiver_data: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    pub receiver_route: Option<Vec<String>>,
    #[arg(long)]
    pub exchange_time: Option<f64>,
    #[arg(long)]
    pub origin_fraction: Option<f64>,
}

fn exit_code(err: &anyhow::Error) -> u8 {
    let numerical = err
        .chain()
        .any(|c| matches!(c.downcast_ref::<holdwise::Error>(), Some(holdwise::Error::Numerical(_))));
    if numerical {
        EXIT_NUMERICAL
    } else {
        EXIT_BAD_INPUT
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.global.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).parse_default_env().init();
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}

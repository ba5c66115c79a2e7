use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// Normal-behaviour modelling and CUSUM monitoring for machine fleets.
#[derive(Debug, Parser)]
#[command(name = "fleetmon", version, about)]
pub struct Cli {
    /// Seed for every random choice of the run. Overrides the config file.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// JSON configuration for the subcommand. Flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Directory receiving every artifact of the run.
    #[arg(long, global = true, default_value = ".")]
    pub out_dir: PathBuf,

    /// Worker threads for batched prediction.
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic fleet with known power curves and faults.
    Simulate(SimulateArgs),
    /// Parse a SCADA export into the expanded dataset layout.
    Ingest(IngestArgs),
    /// Drop rows affected by logged events.
    Filter(FilterArgs),
    /// Train a model for one unit from scratch.
    Train(TrainArgs),
    /// Train one model on the pooled rows of several units.
    Pretrain(PretrainArgs),
    /// Continue training a fleet model on one unit.
    Finetune(FinetuneArgs),
    /// Score a model on held-out rows.
    Evaluate(EvaluateArgs),
    /// Run the CUSUM chart over a stream of observations.
    Monitor(MonitorArgs),
    /// Classify labeled windows over a grid of decision intervals.
    Sweep(SweepArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum FeatureSetArg {
    Compact,
    Operational,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub units: Option<usize>,
    /// Rows per unit: one value for all units or a comma-separated list.
    #[arg(long, value_delimiter = ',')]
    pub rows: Option<Vec<usize>>,
    #[arg(long)]
    pub rated_power: Option<f64>,
    #[arg(long, value_enum)]
    pub features: Option<FeatureSetArg>,
    /// Fault as UNIT:START_HOUR:HOURS[:SIGMAS], e.g. T02:400:24. Repeatable;
    /// replaces faults from the config file.
    #[arg(long = "fault", allow_hyphen_values = true)]
    pub faults: Vec<String>,
    /// Default mean shift of a fault, in noise standard deviations.
    #[arg(long)]
    pub shift_sigmas: Option<f64>,
    /// Healthy windows to cut per unit. Fault windows are cut whenever this is set.
    #[arg(long)]
    pub healthy_windows: Option<usize>,
    #[arg(long)]
    pub window_length: Option<usize>,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub schema: Option<PathBuf>,
    /// Unit id; defaults to the input file stem.
    #[arg(long)]
    pub unit: Option<String>,
}

#[derive(Debug, Args)]
pub struct FilterArgs {
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub events: Option<PathBuf>,
    #[arg(long)]
    pub schema: Option<PathBuf>,
    #[arg(long)]
    pub unit: Option<String>,
    #[arg(long)]
    pub pre_outage_days: Option<f64>,
}

/// Options shared by the three training subcommands.
#[derive(Debug, Args)]
pub struct FitArgs {
    /// a1, a2, or a JSON architecture file.
    #[arg(long)]
    pub arch: Option<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub schema: Option<PathBuf>,
    /// Divisor applied to targets during training; defaults to the rated power.
    #[arg(long)]
    pub output_scale: Option<f64>,
    #[arg(long)]
    pub rated_power: Option<f64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub unit: Option<String>,
    #[command(flatten)]
    pub fit: FitArgs,
}

#[derive(Debug, Args)]
pub struct PretrainArgs {
    /// One dataset per unit. Repeatable.
    #[arg(long = "input")]
    pub inputs: Vec<PathBuf>,
    #[command(flatten)]
    pub fit: FitArgs,
}

#[derive(Debug, Args)]
pub struct FinetuneArgs {
    /// Pre-trained fleet bundle.
    #[arg(long)]
    pub bundle: Option<PathBuf>,
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub unit: Option<String>,
    #[command(flatten)]
    pub fit: FitArgs,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub bundle: Option<PathBuf>,
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub schema: Option<PathBuf>,
    #[arg(long)]
    pub unit: Option<String>,
    #[arg(long)]
    pub rated_power: Option<f64>,
    /// Calibration resolution: levels k/n for k = 1..n-1 plus 0.95 and 0.99.
    #[arg(long)]
    pub bins: Option<usize>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    Windowed,
    Continuous,
}

#[derive(Debug, Args)]
pub struct MonitorArgs {
    #[arg(long)]
    pub bundle: Option<PathBuf>,
    /// CSV or JSONL stream of observations.
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub schema: Option<PathBuf>,
    #[arg(long)]
    pub unit: Option<String>,
    /// Allowance k in standard deviations.
    #[arg(long)]
    pub k: Option<f64>,
    /// Decision interval I.
    #[arg(long)]
    pub interval: Option<f64>,
    #[arg(long)]
    pub window_length: Option<usize>,
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    /// Re-arm the chart right after each alarm.
    #[arg(long)]
    pub auto_ack: bool,
    /// Monitor state from an earlier run to continue from.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub bundle: Option<PathBuf>,
    /// Directory holding index.csv and the window files it lists.
    #[arg(long)]
    pub windows: Option<PathBuf>,
    #[arg(long)]
    pub schema: Option<PathBuf>,
    #[arg(long)]
    pub k: Option<f64>,
    /// Decision intervals, comma-separated and ascending.
    #[arg(long, value_delimiter = ',')]
    pub grid: Option<Vec<f64>>,
    /// Also write one chart trace per window at the first grid value.
    #[arg(long)]
    pub traces: bool,
}

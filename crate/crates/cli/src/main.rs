mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "earlyexit",
    version,
    about = "Conditional early-exit routing toolkit"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Per-exit FLOP costs of an architecture fixture.
    Cost(CostArgs),
    /// Build, query and inspect patch databases.
    #[command(subcommand)]
    Db(DbCommand),
    /// Simulated quality datasets.
    #[command(subcommand)]
    Sim(SimCommand),
    /// Train and evaluate the quality predictor.
    #[command(subcommand)]
    Predictor(PredictorCommand),
    /// Threshold sweeps and score densities.
    #[command(subcommand)]
    Route(RouteCommand),
    /// Full experiment pipeline driven by a config file.
    Run(RunArgs),
}

/// Where tabular output goes; stdout when absent.
#[derive(Args, Clone)]
pub struct OutFile {
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct CostArgs {
    /// Experiment config; prints the full multi-scale table.
    #[arg(long, conflicts_with_all = ["fixture", "scale", "min_channels", "width_quantum"])]
    pub config: Option<PathBuf>,
    /// Fixture path, or builtin:oasis / builtin:megaportraits.
    #[arg(long, default_value = "builtin:oasis")]
    pub fixture: String,
    /// Branch width factor `a/b`; repeat for a multi-scale table.
    #[arg(long, default_value = "1/4")]
    pub scale: Vec<String>,
    #[arg(long, default_value_t = 64)]
    pub min_channels: u32,
    #[arg(long)]
    pub width_quantum: Option<u32>,
    #[command(flatten)]
    pub out: OutFile,
}

#[derive(Subcommand)]
pub enum DbCommand {
    Build(DbBuildArgs),
    Query(DbQueryArgs),
    Stats(DbStatsArgs),
}

#[derive(Args)]
pub struct DbBuildArgs {
    /// CSV with key columns `k*`, value columns `v*` and optional `class`.
    #[arg(long, conflicts_with = "synthetic")]
    pub input: Option<PathBuf>,
    /// Generate this many random entries instead of reading a CSV.
    #[arg(long)]
    pub synthetic: Option<usize>,
    #[arg(long, default_value_t = 8)]
    pub key_dim: usize,
    /// Number of classes for synthetic entries; 0 leaves them unlabelled.
    #[arg(long, default_value_t = 0)]
    pub classes: u16,
    /// Value tensor shape `C,H,W`.
    #[arg(long, default_value = "1,2,2")]
    pub value_shape: String,
    /// Maximum entries kept per class by farthest-point sampling.
    #[arg(long, default_value_t = usize::MAX)]
    pub cap: usize,
    #[arg(long, default_value_t = 0)]
    pub start_index: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct DbQueryArgs {
    #[arg(long)]
    pub db: PathBuf,
    /// Comma-separated query key.
    #[arg(long, allow_hyphen_values = true)]
    pub key: String,
    #[arg(long)]
    pub class: Option<u16>,
    /// Treat the key as yaw,pitch,roll followed by an expression code and
    /// weight the angle part by this factor.
    #[arg(long, conflicts_with = "class")]
    pub angle_weight: Option<f64>,
    #[command(flatten)]
    pub out: OutFile,
}

#[derive(Args)]
pub struct DbStatsArgs {
    #[arg(long)]
    pub db: PathBuf,
    #[command(flatten)]
    pub out: OutFile,
}

#[derive(Subcommand)]
pub enum SimCommand {
    Gen(SimGenArgs),
}

#[derive(Args)]
pub struct SimGenArgs {
    /// Config whose oracle and dataset sections seed the defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Comma-separated per-exit capacities.
    #[arg(long)]
    pub capacities: Option<String>,
    #[arg(long)]
    pub noise_sd: Option<f64>,
    #[arg(long)]
    pub link_scale: Option<f64>,
    #[arg(long)]
    pub conditions: Option<usize>,
    #[arg(long)]
    pub noise_vectors: Option<usize>,
    #[arg(long)]
    pub val_fraction: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Subcommand)]
pub enum PredictorCommand {
    Train(PredictorTrainArgs),
    Eval(PredictorEvalArgs),
}

#[derive(Args)]
pub struct PredictorTrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "mse")]
    pub loss: String,
    #[arg(long, default_value_t = 0.01)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.0)]
    pub min_lr: f64,
    #[arg(long, default_value_t = 100)]
    pub epochs: usize,
    #[arg(long, default_value_t = 16)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Comma-separated hidden widths.
    #[arg(long, default_value = "64,64")]
    pub hidden: String,
    #[arg(long, default_value_t = 0.2)]
    pub slope: f64,
    /// Model checkpoint to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Per-epoch loss CSV; stdout when absent.
    #[arg(long)]
    pub history: Option<PathBuf>,
}

#[derive(Args)]
pub struct PredictorEvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// train, val or all.
    #[arg(long, default_value = "val")]
    pub split: String,
    #[command(flatten)]
    pub out: OutFile,
}

#[derive(Subcommand)]
pub enum RouteCommand {
    Sweep(RouteSweepArgs),
    Kde(RouteKdeArgs),
}

#[derive(Args)]
pub struct RouteSweepArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Dataset supplying inputs and their true scores.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "val")]
    pub split: String,
    /// `start:stop:step` or a comma list.
    #[arg(long)]
    pub thresholds: String,
    /// Route costs `c1,..,cB,backbone`; defaults to the config or the
    /// bundled fixture at scale 1/4 in GFLOPs.
    #[arg(long)]
    pub costs: Option<String>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub out: OutFile,
}

#[derive(Args)]
pub struct RouteKdeArgs {
    /// Dataset whose true scores at `--exit` are the samples.
    #[arg(long, conflicts_with = "csv")]
    pub data: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub exit: usize,
    #[arg(long, default_value = "all")]
    pub split: String,
    /// CSV file whose `--column` holds the samples.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    #[arg(long, default_value = "score")]
    pub column: String,
    /// Keep only rows with `column=value`.
    #[arg(long, value_name = "COLUMN=VALUE")]
    pub filter: Option<String>,
    #[arg(long, default_value_t = 0.3)]
    pub bandwidth: f64,
    /// Evaluation grid `start:stop:step`; spans the samples when absent.
    #[arg(long)]
    pub grid: Option<String>,
    #[arg(long, default_value_t = 200)]
    pub points: usize,
    #[command(flatten)]
    pub out: OutFile,
}

#[derive(Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Cost(a) => commands::cost(a),
        Command::Db(DbCommand::Build(a)) => commands::db_build(a),
        Command::Db(DbCommand::Query(a)) => commands::db_query(a),
        Command::Db(DbCommand::Stats(a)) => commands::db_stats(a),
        Command::Sim(SimCommand::Gen(a)) => commands::sim_gen(a),
        Command::Predictor(PredictorCommand::Train(a)) => commands::predictor_train(a),
        Command::Predictor(PredictorCommand::Eval(a)) => commands::predictor_eval(a),
        Command::Route(RouteCommand::Sweep(a)) => commands::route_sweep(a),
        Command::Route(RouteCommand::Kde(a)) => commands::route_kde(a),
        Command::Run(a) => commands::run(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

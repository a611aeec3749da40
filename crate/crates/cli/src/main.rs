//! `kwcontrast`: generate synthetic cohorts, train and evaluate encoders, run sweeps.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::Preset;

#[derive(Debug, Parser)]
#[command(
    name = "kwcontrast",
    version,
    about = "Kernel-weighted contrastive learning for brain-age style regression"
)]
struct Cli {
    #[command(flatten)]
    common: Common,

    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every command.
#[derive(Debug, Clone, Args)]
pub struct Common {
    /// JSON config file; flags override its values, which override defaults.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Seed for generation, training, fold assignment and probing.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Directory receiving every output file.
    #[arg(long, global = true, value_name = "DIR", default_value = ".")]
    out_dir: PathBuf,

    /// Worker threads for sweeps; 1 runs cells sequentially.
    #[arg(long, global = true)]
    jobs: Option<usize>,

    /// Log progress to stderr (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic cohort CSV.
    Generate(GenerateArgs),
    /// Train one encoder and write its checkpoint and loss history.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a cohort and write the report JSON.
    Evaluate(EvaluateArgs),
    /// Run a cross-product of axis values, seeds and losses.
    Sweep(SweepArgs),
    /// Aggregate a trend CSV into plot data and a markdown table.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Starting point for the generator settings.
    #[arg(long, value_enum)]
    preset: Option<Preset>,
    #[arg(long)]
    subjects: Option<usize>,
    #[arg(long)]
    sites: Option<usize>,
    #[arg(long)]
    visits: Option<usize>,
    #[arg(long)]
    feature_dim: Option<usize>,
    #[arg(long)]
    site_strength: Option<f64>,
    #[arg(long)]
    noise_std: Option<f64>,
    /// Output file name inside the output directory.
    #[arg(long, default_value = "cohort.csv")]
    out: PathBuf,
}

/// Experiment overrides shared by `train` and `evaluate`.
#[derive(Debug, Args)]
pub struct ExperimentArgs {
    /// Fold held out for internal testing.
    #[arg(long)]
    fold: Option<usize>,
    #[arg(long)]
    folds: Option<usize>,
    /// Comma-separated sites never used for training.
    #[arg(long, value_delimiter = ',')]
    external_sites: Option<Vec<String>>,
    #[arg(long)]
    train_size: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Cohort CSV.
    #[arg(long)]
    cohort: Option<PathBuf>,
    /// One of infonce, yaware, threshold, exp, l1.
    #[arg(long)]
    loss: Option<String>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    temperature: Option<f64>,
    #[command(flatten)]
    experiment: ExperimentArgs,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    cohort: Option<PathBuf>,
    /// Checkpoint written by `train`.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Also fine-tune an HC-vs-AD classifier and report its balanced accuracy.
    #[arg(long)]
    downstream: bool,
    #[command(flatten)]
    experiment: ExperimentArgs,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// One of train_size, loss_kind, sigma, site_strength.
    #[arg(long)]
    axis: Option<String>,
    /// Comma-separated axis values.
    #[arg(long, value_delimiter = ',')]
    values: Option<Vec<String>>,
    /// Comma-separated seeds (overrides --seed).
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Comma-separated loss kinds.
    #[arg(long, value_delimiter = ',')]
    losses: Option<Vec<String>>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Subjects in each generated cohort.
    #[arg(long)]
    subjects: Option<usize>,
    #[arg(long, value_enum)]
    preset: Option<Preset>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Trend CSV written by `sweep`; defaults to trend.csv in the output directory.
    #[arg(long)]
    trend: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.common.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let result = match &cli.command {
        Command::Generate(a) => commands::generate(&cli.common, a),
        Command::Train(a) => commands::train(&cli.common, a),
        Command::Evaluate(a) => commands::evaluate(&cli.common, a),
        Command::Sweep(a) => commands::sweep(&cli.common, a),
        Command::Report(a) => commands::report(&cli.common, a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {:#}", failure.error);
            ExitCode::from(failure.code)
        }
    }
}

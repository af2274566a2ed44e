use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod run_dir;

/// Self-supervised pretraining and evaluation for 3D skeleton sequences.
#[derive(Debug, Parser)]
#[command(name = "skel2vec", version)]
struct Cli {
    /// Root for output directories given as relative paths.
    #[arg(long, global = true, env = "SKEL2VEC_OUT")]
    out_root: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Dataset utilities.
    #[command(subcommand)]
    Data(DataCommand),
    /// Pretrain a student/teacher pair on a dataset's training split.
    Pretrain(PretrainArgs),
    /// Evaluate a checkpoint's teacher encoder with one protocol.
    Eval(EvalArgs),
    /// Masking utilities.
    #[command(subcommand)]
    Mask(MaskCommand),
    /// Pretrain and linearly probe across a grid of one hyperparameter.
    Ablate(AblateArgs),
    /// Summarize a checkpoint manifest.
    Inspect(InspectArgs),
}

#[derive(Debug, Subcommand)]
enum DataCommand {
    /// Generate a synthetic labelled dataset.
    Gen(DataGenArgs),
}

#[derive(Debug, Subcommand)]
enum MaskCommand {
    /// Statistics of the masks the pretraining pipeline would draw.
    Stats(MaskStatsArgs),
}

/// Options shared by commands that read a configuration document.
#[derive(Debug, Args)]
struct ConfigArgs {
    /// JSON or `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Extra `key=value` override, repeatable; dotted keys reach nested
    /// fields.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Debug, Args)]
struct DataGenArgs {
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    classes: Option<usize>,
    #[arg(long)]
    per_class: Option<usize>,
    #[arg(long)]
    joints: Option<usize>,
    #[arg(long)]
    frames: Option<usize>,
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct PretrainArgs {
    /// Dataset directory.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    config: ConfigArgs,
    /// Start from the full-size defaults (`full`) or the small CPU
    /// setting (`toy`) before applying the config file.
    #[arg(long, default_value = "full")]
    preset: String,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Continue the run saved in this checkpoint directory.
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long, value_parser = ["linear", "finetune", "semi", "transfer"])]
    protocol: String,
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    config: ConfigArgs,
    /// Label fraction for the semi-supervised protocol.
    #[arg(long)]
    fraction: Option<f64>,
    /// Runs averaged by the semi-supervised protocol.
    #[arg(long)]
    runs: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated source joint for every target joint (transfer).
    #[arg(long, value_delimiter = ',')]
    joint_map: Option<Vec<usize>>,
}

#[derive(Debug, Args)]
struct MaskStatsArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long, default_value = "full")]
    preset: String,
    #[arg(long)]
    strategy: Option<String>,
    #[arg(long)]
    alpha: Option<usize>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    ratio: Option<f64>,
    /// Masks drawn per sequence.
    #[arg(long, default_value_t = 1)]
    samples: usize,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct AblateArgs {
    #[arg(long, value_parser = ["strategy", "alpha", "beta", "ratio", "tau0"])]
    axis: String,
    /// Comma-separated values; defaults to the axis's standard grid.
    #[arg(long)]
    grid: Option<String>,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long, default_value = "toy")]
    preset: String,
    /// Linear-probe configuration file.
    #[arg(long)]
    probe_config: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "0")]
    seeds: Vec<u64>,
    #[arg(long)]
    epochs: Option<usize>,
}

#[derive(Debug, Args)]
struct InspectArgs {
    /// Checkpoint directory.
    ckpt: PathBuf,
    /// Print the full manifest as JSON instead of a summary.
    #[arg(long)]
    json: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

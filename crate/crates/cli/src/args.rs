use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(
    name = "graphdiff",
    version,
    about = "Conditional graph diffusion for sensing-link selection"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train the denoiser and write checkpoint, metrics and curve.
    Train(TrainArgs),
    /// Sample one trajectory for a target and render snapshots.
    Sample(SampleArgs),
    /// Evaluate a checkpoint on the validation targets.
    Eval(EvalArgs),
    /// Report greedy and random baseline rewards.
    Baselines(BaselineArgs),
    /// Check a configuration file and list every violation.
    ValidateConfig(ValidateArgs),
}

/// Flags shared by every command that reads a run configuration.
#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    /// Configuration file; the reference configuration when omitted.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Master seed override.
    #[arg(long, value_name = "U64")]
    pub seed: Option<u64>,
    /// Output directory override.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Epoch count override.
    #[arg(long, value_name = "N")]
    pub epochs: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct SampleArgs {
    #[command(flatten)]
    pub run: RunArgs,
    #[arg(long, value_name = "PATH")]
    pub checkpoint: PathBuf,
    /// Target position in metres.
    #[arg(long, num_args = 2, value_names = ["X", "Y"], allow_negative_numbers = true)]
    pub target: Vec<f64>,
    /// Snapshot steps, counted in reverse steps taken from pure noise.
    #[arg(
        long,
        value_name = "LIST",
        value_delimiter = ',',
        default_value = "0,10,20,30,40,50"
    )]
    pub steps: Vec<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub run: RunArgs,
    #[arg(long, value_name = "PATH")]
    pub checkpoint: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct BaselineArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Number of sampled targets.
    #[arg(long, value_name = "N", default_value_t = 32)]
    pub targets: usize,
}

#[derive(Debug, Clone, Args)]
pub struct ValidateArgs {
    #[arg(long, value_name = "PATH")]
    pub config: PathBuf,
}

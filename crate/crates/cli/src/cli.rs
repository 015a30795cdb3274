use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

/// Three-view video transformer for affective-state classification.
#[derive(Debug, Parser)]
#[command(name = "engageformer", version, about)]
pub struct Cli {
    /// Worker threads for batch gradients and evaluation; results do not
    /// depend on this value.
    #[arg(long, global = true, default_value_t = 1)]
    pub threads: usize,

    /// Print the effective configuration (defaults or --config) and exit.
    #[arg(long)]
    pub print_config: bool,

    /// Config file used with --print-config.
    #[arg(long, requires = "print_config")]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Option<Command>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train on a manifest, writing one checkpoint per epoch.
    Train(TrainArgs),
    /// Print accuracy, macro precision/recall and the confusion grid.
    Eval(EvalArgs),
    /// Classify one clip.
    Predict(PredictArgs),
    /// Compare analytic and finite-difference gradients of every parameter.
    Gradcheck(GradcheckArgs),
    /// Write a labelled synthetic clip set and its manifest.
    Synth(SynthArgs),
    /// Split a manifest 80:20 per class into train.tsv and test.tsv.
    Split(SplitArgs),
}

#[derive(Debug, Args)]
pub struct SeedArg {
    /// Overrides train.seed.
    #[arg(long, env = "ENGAGEFORMER_SEED")]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Training manifest.
    #[arg(long)]
    pub data: PathBuf,
    /// Directory for checkpoints and train.log.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub seed: SeedArg,
    /// Overrides train.epochs.
    #[arg(long)]
    pub epochs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub clip: PathBuf,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Model config; defaults to the built-in toy model.
    #[arg(long)]
    pub toy_config: Option<PathBuf>,
    #[command(flatten)]
    pub seed: SeedArg,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Clips per class.
    #[arg(long)]
    pub n: usize,
    #[arg(long, default_value_t = 6)]
    pub classes: usize,
    /// Clip geometry as TxHxWxD.
    #[arg(long, default_value = "8x16x16x3")]
    pub geometry: String,
    #[command(flatten)]
    pub seed: SeedArg,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub seed: SeedArg,
}

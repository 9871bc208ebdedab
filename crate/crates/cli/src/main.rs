mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Composite-degradation image restoration: data synthesis, encoder
/// alignment, training, restoration and evaluation.
#[derive(Parser, Debug)]
#[command(name = "aio-restore", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Seed for every random choice the command makes.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Flat key=value file; command-line flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic clean/degraded dataset with a manifest.
    Degrade(DegradeArgs),
    /// Align the descriptor encoder on single-degradation images.
    PretrainEncoder(PretrainArgs),
    /// Train the restorer.
    Train(TrainArgs),
    /// Restore individual images.
    Restore(RestoreArgs),
    /// Score a checkpoint on a dataset split.
    Eval(EvalArgs),
    /// Run the gradient and oracle self-checks.
    Selftest(SelftestArgs),
}

#[derive(Args, Debug)]
pub struct DegradeArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    out: PathBuf,
    /// Samples per recipe.
    #[arg(long)]
    per_recipe: Option<usize>,
    /// Side of procedural base images.
    #[arg(long)]
    size: Option<usize>,
    /// Directory of clean .ppm/.png photos to degrade instead of procedural scenes.
    #[arg(long)]
    base: Option<PathBuf>,
    /// Only the four single-degradation recipes (for encoder alignment).
    #[arg(long)]
    single: bool,
    /// Write PNG instead of PPM.
    #[arg(long)]
    png: bool,
}

#[derive(Args, Debug)]
pub struct PretrainArgs {
    #[command(flatten)]
    common: Common,
    /// Training manifest (single-degradation rows).
    #[arg(long)]
    data: PathBuf,
    /// Held-out manifest for loss tracking and the class probe.
    #[arg(long)]
    heldout: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    crop: Option<usize>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Aligned encoder or training checkpoint; optimizer state, if present, resumes the run.
    #[arg(long)]
    ckpt: Option<PathBuf>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    crop: Option<usize>,
    /// Write a checkpoint every this many epochs (0 keeps only the final one).
    #[arg(long, default_value_t = 5)]
    checkpoint_every: usize,
    /// Replace the adaptive weights with the uniform vector.
    #[arg(long)]
    uniform: bool,
    /// Print wall-clock time per epoch.
    #[arg(long)]
    timing: bool,
}

#[derive(Args, Debug)]
pub struct RestoreArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    #[arg(long)]
    k: Option<usize>,
    /// Write λ and the selected token indices per image.
    #[arg(long)]
    debug_descriptors: bool,
    /// Report wall-clock time per image.
    #[arg(long)]
    timing: bool,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Directory for eval.txt and eval.json; the table is always printed.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    uniform: bool,
    /// Evaluate only the first N rows.
    #[arg(long)]
    limit: Option<usize>,
}

#[derive(Args, Debug)]
pub struct SelftestArgs {
    #[command(flatten)]
    common: Common,
    /// Also write the report to selftest.txt here.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return ExitCode::from(if usage { 1 } else { 0 });
        }
    };
    let r = match cli.command {
        Command::Degrade(a) => commands::degrade(a),
        Command::PretrainEncoder(a) => commands::pretrain(a),
        Command::Train(a) => commands::train(a),
        Command::Restore(a) => commands::restore(a),
        Command::Eval(a) => commands::eval(a),
        Command::Selftest(a) => commands::selftest(a),
    };
    match r {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

//! `euda`: train, evaluate and inspect domain-adaptation models over feature files.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use euda_core::{ErrorClass, Estimator, EudaError};
use log::LevelFilter;

/// Exit status when `gradcheck` runs but the error exceeds its tolerance.
const EXIT_CHECK_FAILED: u8 = 4;

#[derive(Debug, Parser)]
#[command(name = "euda", version, about = "Unsupervised domain adaptation over frozen features")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train on a labeled source and an unlabeled target feature file.
    Train(TrainArgs),
    /// Write a synthetic shifted-Gaussian source/target pair.
    Synth(SynthArgs),
    /// Report the accuracy of a checkpoint on a labeled feature file.
    Eval(EvalArgs),
    /// Compare analytic and finite-difference gradients of the training objective.
    Gradcheck(GradcheckArgs),
    /// Count trainable parameters for an input width, bottleneck and class count.
    Params(ParamsArgs),
    /// Convert a feature file between CSV and EUDF, chosen by extension.
    Convert(ConvertArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum KernelArg {
    Rbf,
    Linear,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum EstimatorArg {
    Biased,
    Unbiased,
}

impl From<EstimatorArg> for Estimator {
    fn from(e: EstimatorArg) -> Self {
        match e {
            EstimatorArg::Biased => Estimator::Biased,
            EstimatorArg::Unbiased => Estimator::Unbiased,
        }
    }
}

/// Training hyperparameters settable from the command line; they override the config file.
#[derive(Debug, Args)]
struct Overrides {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// S, B, L, H or custom:a,b,c
    #[arg(long)]
    bottleneck: Option<String>,
    #[arg(long, value_enum)]
    kernel: Option<KernelArg>,
    #[arg(long, value_enum)]
    estimator: Option<EstimatorArg>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    source: PathBuf,
    #[arg(long)]
    target: PathBuf,
    /// JSON file with flat snake_case keys.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "euda-run")]
    out_dir: PathBuf,
    /// Also write a checkpoint every k epochs.
    #[arg(long, value_name = "K")]
    checkpoint_every: Option<usize>,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 3)]
    classes: usize,
    #[arg(long, default_value_t = 16)]
    dim: usize,
    /// Samples per class in each domain.
    #[arg(long, default_value_t = 100)]
    per_class: usize,
    /// Distance between class means.
    #[arg(long, default_value_t = 4.0)]
    radius: f64,
    /// Norm of the source-to-target displacement.
    #[arg(long, default_value_t = 2.5)]
    shift: f64,
    #[arg(long, default_value_t = 1.0)]
    noise: f64,
    /// Force the displacement to zero.
    #[arg(long)]
    zero_shift: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long, required_unless_present = "manifest")]
    checkpoint: Option<PathBuf>,
    #[arg(long, required_unless_present = "manifest")]
    data: Option<PathBuf>,
    /// Evaluate a finished run after verifying its recorded digests.
    #[arg(long, conflicts_with_all = ["checkpoint", "data"])]
    manifest: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct GradcheckArgs {
    #[arg(long, value_enum, default_value = "tiny")]
    preset: GradcheckPreset,
    #[arg(long, default_value_t = 1e-5)]
    epsilon: f64,
    /// Pass threshold on the max relative error.
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long, value_enum)]
    kernel: Option<KernelArg>,
    #[arg(long, value_enum)]
    estimator: Option<EstimatorArg>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum GradcheckPreset {
    /// d=6, bottleneck [8,4], 3 classes, 8 rows per domain.
    Tiny,
}

#[derive(Debug, Args)]
struct ParamsArgs {
    #[arg(long)]
    input_dim: usize,
    /// Bottleneck: S, B, L, H or custom:a,b,c
    #[arg(long = "config", alias = "bottleneck", default_value = "B")]
    bottleneck: String,
    #[arg(long)]
    classes: usize,
}

#[derive(Debug, Args)]
struct ConvertArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Class count for CSV input; inferred from the largest label otherwise.
    #[arg(long)]
    classes: Option<usize>,
}

fn init_logging() -> Result<(), EudaError> {
    let level = match std::env::var("EUDA_LOG").as_deref() {
        Err(_) | Ok("info") => LevelFilter::Info,
        Ok("quiet") => LevelFilter::Error,
        Ok("debug") => LevelFilter::Debug,
        Ok(other) => {
            return Err(EudaError::config(
                "EUDA_LOG",
                format!("`{other}` is not quiet, info or debug"),
            ))
        }
    };
    env_logger::Builder::new()
        .filter_level(level)
        .format_timestamp(None)
        .target(env_logger::Target::Stderr)
        .init();
    Ok(())
}

fn exit_code(err: &EudaError) -> u8 {
    match err.class() {
        ErrorClass::Config => 1,
        ErrorClass::Data => 2,
        ErrorClass::Divergence => 3,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = init_logging().and_then(|_| match cli.command {
        Command::Train(a) => commands::train(a),
        Command::Synth(a) => commands::synth(a),
        Command::Eval(a) => commands::eval(a),
        Command::Gradcheck(a) => commands::gradcheck(a),
        Command::Params(a) => commands::params(a),
        Command::Convert(a) => commands::convert(a),
    });
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

//! `segprob`: synthetic ambiguous-segmentation workbench.
//!
//! Subcommands: `generate` a dataset with known ground-truth probability
//! maps, `train` any of the compared strategies, `predict` probability /
//! label / entropy maps with single networks or ensembles, and `evaluate`
//! predictions against a dataset. Every command takes `--config` plus
//! trailing `key=value` overrides and echoes the effective configuration
//! into its output directory. Outputs are byte-deterministic given the
//! seed; wall-clock times only ever appear in logs.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Failures are split by exit code: 1 for invalid configuration or inputs,
/// 2 for runtime failures (I/O mid-run, diverged training).
#[derive(Debug)]
pub enum CliError {
    Validation(String),
    Runtime(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Validation(m) | CliError::Runtime(m) => m,
        }
    }
}

#[derive(Parser)]
#[command(
    name = "segprob",
    about = "Segmentation probability estimation with varying-Tversky ensembles and hypernetworks",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Configuration file of `key = value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Trailing `key=value` overrides; they win over the file.
    #[arg(value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset directory.
    Generate {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Train the configured strategy on a dataset's training split.
    Train {
        #[command(flatten)]
        common: CommonArgs,
        /// Dataset directory produced by `generate`.
        #[arg(long)]
        dataset: PathBuf,
    },
    /// Predict probability, label, and entropy maps for every sample of a
    /// dataset.
    Predict {
        #[command(flatten)]
        common: CommonArgs,
        /// Dataset directory providing the input images.
        #[arg(long)]
        dataset: PathBuf,
        /// Checkpoint directory; repeat for explicit ensemble members, or
        /// point at a training output directory containing member_*/fold_*
        /// subdirectories.
        #[arg(long = "checkpoint", required = true)]
        checkpoints: Vec<PathBuf>,
    },
    /// Evaluate a predictions directory against a dataset.
    Evaluate {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        dataset: PathBuf,
        /// Predictions directory produced by `predict`.
        #[arg(long)]
        predictions: PathBuf,
        /// Method label used in the report rows.
        #[arg(long, default_value = "method")]
        method: String,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Generate { common } => commands::generate(&common.config, &common.out, &common.overrides),
        Command::Train { common, dataset } => {
            commands::train(&common.config, &dataset, &common.out, &common.overrides)
        }
        Command::Predict {
            common,
            dataset,
            checkpoints,
        } => commands::predict(
            &common.config,
            &dataset,
            &checkpoints,
            &common.out,
            &common.overrides,
        ),
        Command::Evaluate {
            common,
            dataset,
            predictions,
            method,
        } => commands::evaluate(
            &common.config,
            &dataset,
            &predictions,
            &method,
            &common.out,
            &common.overrides,
        ),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("segprob: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}

//! The `scalelaw` command-line tool.
//!
//! Each subcommand reads its inputs, runs one analysis from `scalelaw-core`
//! and writes a JSON report with plot-ready CSV sections beside it. Reports
//! identify inputs by SHA-256 and carry no timestamps or paths, so identical
//! inputs and seeds give byte-identical output.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use scalelaw_core::run_data::RunFormat;
use serde::Deserialize;

pub mod cmd;
pub mod error;
pub mod output;

pub use error::{CliError, CliResult, ExitKind};

#[derive(Debug, Parser)]
#[command(
    name = "scalelaw",
    version,
    about = "Fit scaling laws for dense and mixture-of-experts language models"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit a loss law to training runs and extrapolate it to new scales.
    FitLoss(cmd::fit_loss::FitLossArgs),
    /// Compute-optimal token/model-scale allocation from fitted coefficients.
    Allocate(cmd::allocate::AllocateArgs),
    /// Optimal batch size or learning rate against loss, from sweeps.
    Hparams(cmd::hparams::HparamsArgs),
    /// Gradient noise scale from squared gradient norms at two batch sizes.
    Noise(cmd::noise::NoiseArgs),
    /// Generate synthetic runs or sweep heatmaps from a spec.
    Synth(cmd::synth::SynthArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FormatArg {
    Csv,
    Jsonl,
}

impl From<FormatArg> for RunFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Csv => RunFormat::Csv,
            FormatArg::Jsonl => RunFormat::Jsonl,
        }
    }
}

/// Flags shared by every subcommand.
#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// Input file; repeat for commands that take several.
    #[arg(long, short)]
    pub input: Vec<PathBuf>,
    /// Report path (for `synth`, the generated data file).
    #[arg(long, short)]
    pub output: Option<PathBuf>,
    /// JSON file with the command's settings; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Seed for any randomized step.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Run-data format; inferred from the file extension when omitted.
    #[arg(long, value_enum)]
    pub format: Option<FormatArg>,
    /// Directory for outputs when --output is not given.
    #[arg(long, env = "SCALELAW_OUTPUT_DIR")]
    pub output_dir: Option<PathBuf>,
}

impl CommonArgs {
    pub fn run_format(&self, path: &Path, configured: Option<FormatArg>) -> RunFormat {
        self.format
            .or(configured)
            .map(RunFormat::from)
            .unwrap_or_else(|| RunFormat::from_path(path))
    }

    pub fn single_input(&self) -> CliResult<&Path> {
        match self.input.as_slice() {
            [one] => Ok(one),
            [] => Err(CliError::input(anyhow::anyhow!("--input is required"))),
            _ => Err(CliError::input(anyhow::anyhow!("this command takes exactly one --input"))),
        }
    }
}

pub fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::FitLoss(a) => cmd::fit_loss::run(a),
        Command::Allocate(a) => cmd::allocate::run(a),
        Command::Hparams(a) => cmd::hparams::run(a),
        Command::Noise(a) => cmd::noise::run(a),
        Command::Synth(a) => cmd::synth::run(a),
    }
}

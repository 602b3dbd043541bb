use anyhow::anyhow;
use clap::Args;
use scalelaw_core::hparam_scaling::Knob;
use scalelaw_core::run_data::RunFormat;
use scalelaw_core::synthgen::{generate_heatmap, generate_runs, generate_sweep_runs, SynthSpec};

use crate::error::{CliError, CliResult};
use crate::output::{atomic_write, read_bytes, resolve_output};
use crate::CommonArgs;

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// --config holds the synthetic spec (law, scales, token_grid, experts,
    /// noise, batch_law, lr_law, seed); --seed overrides the spec's seed.
    #[command(flatten)]
    pub common: CommonArgs,
    /// Write a heatmap CSV for this knob instead of runs.
    #[arg(long, conflicts_with = "sweep")]
    pub heatmap: Option<Knob>,
    /// Write one run per value of this knob (a hyperparameter sweep).
    #[arg(long)]
    pub sweep: Option<Knob>,
}

pub fn run(args: SynthArgs) -> CliResult<()> {
    let path = args
        .common
        .config
        .as_deref()
        .ok_or_else(|| CliError::input(anyhow!("--config with a synthetic spec is required")))?;
    let bytes = read_bytes(path)?;
    let mut spec: SynthSpec = serde_json::from_slice(&bytes)
        .map_err(|e| CliError::input(anyhow!("spec {}: {e}", path.display())))?;
    if let Some(seed) = args.common.seed {
        spec.seed = seed;
    }

    let mut data = Vec::new();
    let out = if let Some(knob) = args.heatmap {
        let out = resolve_output(&args.common, "heatmap.csv");
        generate_heatmap(&spec, knob)?.write_csv(&mut data).map_err(CliError::internal)?;
        out
    } else {
        let format = args.common.format.map(RunFormat::from);
        let default_name = match format {
            Some(RunFormat::Jsonl) => "synth.jsonl",
            _ => "synth.csv",
        };
        let out = resolve_output(&args.common, default_name);
        let format = format.unwrap_or_else(|| RunFormat::from_path(&out));
        let runs = match args.sweep {
            Some(knob) => generate_sweep_runs(&spec, knob)?,
            None => generate_runs(&spec)?,
        };
        runs.write(&mut data, format).map_err(CliError::internal)?;
        out
    };
    atomic_write(&out, &data)?;
    log::info!("wrote {}", out.display());
    Ok(())
}

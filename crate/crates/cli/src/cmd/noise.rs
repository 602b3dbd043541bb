use anyhow::anyhow;
use clap::{Args, ValueEnum};
use scalelaw_core::digest::sha256_hex;
use scalelaw_core::hparam_scaling::{estimate_noise_scale, BatchNormSample, LrBatchRelation, NoiseScaleEstimate, Optimizer};
use serde::{Deserialize, Serialize};

use super::{num, opt_num};
use crate::error::{CliError, CliResult};
use crate::output::{emit, load_config, read_bytes, resolve_output, CsvSection, InputRef};
use crate::CommonArgs;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerArg {
    Sgd,
    Adam,
    Both,
}

#[derive(Debug, Args)]
pub struct NoiseArgs {
    /// Input is a CSV with columns batch_size,mean_sq_norm[,samples]; the
    /// smallest and largest batch sizes are used.
    #[command(flatten)]
    pub common: CommonArgs,
    /// Learning-rate relation(s) to tabulate [default: both]
    #[arg(long, value_enum)]
    pub optimizer: Option<OptimizerArg>,
    /// Largest useful learning rate; curves are in these units [default: 1.0]
    #[arg(long)]
    pub eps_max: Option<f64>,
    /// Decades either side of the noise scale covered by the curve [default: 3]
    #[arg(long)]
    pub decades: Option<u32>,
    /// Curve points per decade [default: 10]
    #[arg(long)]
    pub points_per_decade: Option<u32>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct NoiseConfig {
    optimizer: Option<OptimizerArg>,
    eps_max: Option<f64>,
    decades: Option<u32>,
    points_per_decade: Option<u32>,
}

#[derive(Debug, Serialize)]
struct NoiseBody {
    operation: &'static str,
    estimator: &'static str,
    small_batch: BatchNormSample,
    big_batch: BatchNormSample,
    estimate: NoiseScaleEstimate,
    relations: Vec<LrBatchRelation>,
    #[serde(skip_serializing_if = "Option::is_none")]
    adam_peak_batch: Option<f64>,
}

fn read_samples(bytes: &[u8]) -> CliResult<Vec<BatchNormSample>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).comment(Some(b'#')).from_reader(bytes);
    let mut rows = Vec::new();
    for (i, row) in rdr.deserialize::<BatchNormSample>().enumerate() {
        rows.push(row.map_err(|e| CliError::input(anyhow!("row {}: {e}", i + 2)))?);
    }
    if rows.len() < 2 {
        return Err(CliError::input(anyhow!(
            "need rows for at least two batch sizes (columns batch_size,mean_sq_norm[,samples])"
        )));
    }
    Ok(rows)
}

pub fn run(args: NoiseArgs) -> CliResult<()> {
    let cfg: NoiseConfig = load_config(args.common.config.as_deref())?;
    let path = args.common.single_input()?;
    let bytes = read_bytes(path)?;
    let rows = read_samples(&bytes)?;
    let small = *rows.iter().min_by(|a, b| a.batch_size.total_cmp(&b.batch_size)).expect("non-empty");
    let big = *rows.iter().max_by(|a, b| a.batch_size.total_cmp(&b.batch_size)).expect("non-empty");
    let estimate = estimate_noise_scale(small, big)?;

    let mut warnings = Vec::new();
    if rows.len() > 2 {
        warnings.push(format!(
            "{} rows given; only the smallest ({}) and largest ({}) batch sizes are used",
            rows.len(),
            small.batch_size,
            big.batch_size
        ));
    }
    if estimate.clamped {
        warnings.push("a negative |G|^2 or tr(Sigma) estimate was clamped to zero".into());
    }

    let which = args.optimizer.or(cfg.optimizer).unwrap_or(OptimizerArg::Both);
    let eps_max = args.eps_max.or(cfg.eps_max).unwrap_or(1.0);
    if !(eps_max.is_finite() && eps_max > 0.0) {
        return Err(CliError::input(anyhow!("--eps-max must be positive")));
    }
    let decades = args.decades.or(cfg.decades).unwrap_or(3) as i64;
    let per_decade = args.points_per_decade.or(cfg.points_per_decade).unwrap_or(10).max(1) as i64;

    let mut relations = Vec::new();
    let mut sections = Vec::new();
    let mut adam_peak_batch = None;
    match estimate.b_noise {
        Some(b_noise) if b_noise > 0.0 => {
            let optimizers: &[Optimizer] = match which {
                OptimizerArg::Sgd => &[Optimizer::Sgd],
                OptimizerArg::Adam => &[Optimizer::Adam],
                OptimizerArg::Both => &[Optimizer::Sgd, Optimizer::Adam],
            };
            relations = optimizers
                .iter()
                .map(|&optimizer| LrBatchRelation {
                    eps_max,
                    b_noise,
                    optimizer,
                })
                .collect();
            // the grid passes exactly through B = B_noise
            let batches: Vec<f64> = (-decades * per_decade..=decades * per_decade)
                .map(|k| if k == 0 { b_noise } else { b_noise * 10f64.powf(k as f64 / per_decade as f64) })
                .collect();
            let mut header = vec!["batch_size"];
            header.extend(optimizers.iter().map(|o| match o {
                Optimizer::Sgd => "sgd_lr",
                Optimizer::Adam => "adam_lr",
            }));
            let mut csv = CsvSection::new("lr_curve", &header);
            let mut best: Option<(f64, f64)> = None;
            for &b in &batches {
                let mut row = vec![num(b)];
                for rel in &relations {
                    let lr = rel.opt_lr(b);
                    if rel.optimizer == Optimizer::Adam && best.is_none_or(|(_, v)| lr > v) {
                        best = Some((b, lr));
                    }
                    row.push(num(lr));
                }
                csv.row(row);
            }
            adam_peak_batch = best.map(|b| b.0);
            sections.push(csv);
        }
        other => warnings.push(format!(
            "noise scale is {}; learning-rate curves omitted",
            if other.is_none() { "undefined (|G|^2 = 0)".to_string() } else { opt_num(other) }
        )),
    }

    let out = resolve_output(&args.common, "noise.json");
    emit(
        &out,
        "noise",
        vec![InputRef {
            role: "gradient_norms".into(),
            sha256: sha256_hex(&bytes),
        }],
        None,
        NoiseBody {
            operation: "estimate_noise_scale",
            estimator: "simple noise scale tr(Sigma)/|G|^2 (identity Hessian), two batch sizes",
            small_batch: small,
            big_batch: big,
            estimate,
            relations,
            adam_peak_batch,
        },
        sections,
        warnings,
    )
}

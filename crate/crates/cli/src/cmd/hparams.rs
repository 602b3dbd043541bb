use std::path::Path;

use anyhow::anyhow;
use clap::{Args, ValueEnum};
use scalelaw_core::digest::sha256_hex;
use scalelaw_core::hparam_scaling::{
    extract_contour_minima, fit_bopt_law, fit_epsopt_law, heatmap_from_contours, interval_overlap, ContourMinimum,
    Heatmap, HparamError, Knob, MinimaFitOptions, PowerLawFit, HEATMAP_COLUMNS,
};
use scalelaw_core::run_data::{group_iso_token, parse_runs};
use serde::{Deserialize, Serialize};

use super::{log_grid, num};
use crate::error::{CliError, CliResult};
use crate::output::{emit, load_config, read_bytes, resolve_output, CsvSection, InputRef};
use crate::{CommonArgs, FormatArg};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputKind {
    /// Detect from the CSV header.
    Auto,
    /// `token_level,knob_value,loss` rows.
    Heatmap,
    /// Training runs of a sweep, grouped into iso-token contours.
    Runs,
}

#[derive(Debug, Args)]
pub struct HparamsArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Swept hyperparameter: batch_size or learning_rate.
    #[arg(long)]
    pub knob: Option<Knob>,
    /// Label for the matching --input; repeatable [default: file stem]
    #[arg(long)]
    pub label: Vec<String>,
    /// How to read inputs [default: auto]
    #[arg(long, value_enum)]
    pub input_kind: Option<InputKind>,
    /// Comma-separated token levels for run inputs [default: token counts of the first run]
    #[arg(long, value_delimiter = ',')]
    pub token_levels: Vec<f64>,
    /// Relative tolerance for an exact token-level hit [default: 1e-9]
    #[arg(long)]
    pub rel_tol: Option<f64>,
    /// Keep minima at the sweep edge in the power-law fit.
    #[arg(long)]
    pub include_boundary: bool,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct HparamsConfig {
    knob: Option<Knob>,
    labels: Option<Vec<String>>,
    input_kind: Option<InputKind>,
    token_levels: Option<Vec<f64>>,
    rel_tol: Option<f64>,
    include_boundary: Option<bool>,
    format: Option<FormatArg>,
}

#[derive(Debug, Serialize)]
struct DatasetResult {
    label: String,
    input_sha256: String,
    operation: &'static str,
    minima: Vec<ContourMinimum>,
    boundary_minima: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    fit_operation: Option<&'static str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    fit: Option<PowerLawFit>,
}

#[derive(Debug, Serialize)]
struct Overlap {
    operation: &'static str,
    definition: &'static str,
    labels: [String; 2],
    value: f64,
}

#[derive(Debug, Serialize)]
struct HparamsBody {
    knob: Knob,
    include_boundary: bool,
    datasets: Vec<DatasetResult>,
    #[serde(skip_serializing_if = "Option::is_none")]
    overlap: Option<Overlap>,
}

const OVERLAP_DEFINITION: &str =
    "artifact-defined: intersection over union of the two fits' loss ranges, measured in log loss";

fn is_heatmap(bytes: &[u8]) -> bool {
    String::from_utf8_lossy(bytes)
        .lines()
        .map(str::trim)
        .find(|l| !l.is_empty() && !l.starts_with('#'))
        .is_some_and(|l| l.split(',').map(str::trim).eq(HEATMAP_COLUMNS))
}

fn load_heatmap(
    path: &Path,
    bytes: &[u8],
    kind: InputKind,
    knob: Knob,
    args: &HparamsArgs,
    cfg: &HparamsConfig,
) -> CliResult<Heatmap> {
    let heat = kind == InputKind::Heatmap || (kind == InputKind::Auto && is_heatmap(bytes));
    if heat {
        return Heatmap::read_csv(bytes).map_err(|e| CliError::from(e).context(path.display().to_string()));
    }
    let runs = parse_runs(bytes, args.common.run_format(path, cfg.format))?;
    let levels = if !args.token_levels.is_empty() {
        args.token_levels.clone()
    } else if let Some(l) = &cfg.token_levels {
        l.clone()
    } else {
        runs.series[0].records.iter().map(|r| r.tokens).collect()
    };
    let contours = group_iso_token(&runs, &levels, args.rel_tol.or(cfg.rel_tol).unwrap_or(1e-9))?;
    Ok(heatmap_from_contours(&contours, knob)?)
}

pub fn run(args: HparamsArgs) -> CliResult<()> {
    let cfg: HparamsConfig = load_config(args.common.config.as_deref())?;
    let knob = args
        .knob
        .or(cfg.knob)
        .ok_or_else(|| CliError::input(anyhow!("--knob is required (batch_size or learning_rate)")))?;
    let kind = args.input_kind.or(cfg.input_kind).unwrap_or(InputKind::Auto);
    let include_boundary = args.include_boundary || cfg.include_boundary.unwrap_or(false);
    let labels = if args.label.is_empty() { cfg.labels.clone().unwrap_or_default() } else { args.label.clone() };
    if !(1..=2).contains(&args.common.input.len()) {
        return Err(CliError::input(anyhow!("give one or two --input datasets")));
    }

    let mut inputs = Vec::new();
    let mut datasets = Vec::new();
    let mut warnings = Vec::new();
    let mut refused: Option<CliError> = None;
    for (i, path) in args.common.input.iter().enumerate() {
        let bytes = read_bytes(path)?;
        let digest = sha256_hex(&bytes);
        inputs.push(InputRef {
            role: "sweep".into(),
            sha256: digest.clone(),
        });
        let label = labels.get(i).cloned().unwrap_or_else(|| {
            path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| format!("input{i}"))
        });
        let heat = load_heatmap(path, &bytes, kind, knob, &args, &cfg)?;
        let minima = extract_contour_minima(&heat, knob)?;
        let boundary = minima.iter().filter(|m| m.at_boundary).count();
        if boundary > 0 {
            warnings.push(format!(
                "{label}: {boundary} of {} contour minima lie on the sweep boundary{}",
                minima.len(),
                if include_boundary { "" } else { " and are excluded from the fit" }
            ));
        }
        let options = MinimaFitOptions { include_boundary };
        let fitted = match knob {
            Knob::BatchSize => fit_bopt_law(&minima, options),
            Knob::LearningRate => fit_epsopt_law(&minima, options),
        };
        let fit = match fitted {
            Ok(f) => Some(f),
            Err(e @ HparamError::UnbracketedMinima { .. }) => {
                warnings.push(format!("{label}: fit refused: {e}"));
                refused.get_or_insert(CliError::refused(anyhow!("{label}: {e}")));
                None
            }
            Err(e) => return Err(CliError::from(e).context(label)),
        };
        datasets.push(DatasetResult {
            label,
            input_sha256: digest,
            operation: "extract_contour_minima",
            minima,
            boundary_minima: boundary,
            fit_operation: fit.as_ref().map(|_| match knob {
                Knob::BatchSize => "fit_bopt_law",
                Knob::LearningRate => "fit_epsopt_law",
            }),
            fit,
        });
    }

    let overlap = match datasets.as_slice() {
        [a, b] => match (&a.fit, &b.fit) {
            (Some(fa), Some(fb)) => Some(Overlap {
                operation: "interval_overlap",
                definition: OVERLAP_DEFINITION,
                labels: [a.label.clone(), b.label.clone()],
                value: interval_overlap(fa, fb),
            }),
            _ => None,
        },
        _ => None,
    };

    let mut minima_csv = CsvSection::new(
        "minima",
        &["dataset", "token_level", "knob", "loss_min", "knob_opt", "at_boundary"],
    );
    let mut fits_csv = CsvSection::new(
        "fits",
        &["dataset", "knob", "lambda", "alpha", "stderr", "loss_min", "loss_max", "n_points"],
    );
    let mut curve_csv = CsvSection::new("fit_curve", &["dataset", "loss", "knob_opt"]);
    for d in &datasets {
        for m in &d.minima {
            minima_csv.row([
                d.label.clone(),
                num(m.token_level),
                knob.to_string(),
                num(m.loss_min),
                num(m.knob_opt),
                m.at_boundary.to_string(),
            ]);
        }
        if let Some(f) = &d.fit {
            fits_csv.row([
                d.label.clone(),
                knob.to_string(),
                num(f.lambda),
                num(f.alpha_exp),
                num(f.stderr),
                num(f.loss_range.0),
                num(f.loss_range.1),
                f.n_points.to_string(),
            ]);
            for l in log_grid(f.loss_range.0, f.loss_range.1, 50) {
                curve_csv.row([d.label.clone(), num(l), num(f.predict(l))]);
            }
        }
    }

    let out = resolve_output(&args.common, "hparams.json");
    emit(
        &out,
        "hparams",
        inputs,
        None,
        HparamsBody {
            knob,
            include_boundary,
            datasets,
            overlap,
        },
        vec![minima_csv, fits_csv, curve_csv],
        warnings,
    )?;
    match refused {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

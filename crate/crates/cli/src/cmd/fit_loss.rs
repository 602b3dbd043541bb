use clap::{Args, ValueEnum};
use scalelaw_core::fit_engine::DEFAULT_HUBER_DELTA;
use scalelaw_core::loss_laws::{
    extrapolate, fit_loss_law, record_scale, BootstrapOptions, CoefficientsDocument, LossFitOptions, LossLaw,
    ScaleArgument,
};
use scalelaw_core::run_data::load_runs;
use serde::{Deserialize, Serialize};

use super::{log_grid, num, opt_num};
use crate::error::CliResult;
use crate::output::{emit, load_config, resolve_output, CsvSection, InputRef};
use crate::{CommonArgs, FormatArg};

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ScaleArg {
    ModelScale,
    Params,
}

impl From<ScaleArg> for ScaleArgument {
    fn from(s: ScaleArg) -> Self {
        match s {
            ScaleArg::ModelScale => ScaleArgument::ModelScale,
            ScaleArg::Params => ScaleArgument::Params,
        }
    }
}

#[derive(Debug, Args)]
pub struct FitLossArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Loss law: dense, moe, clark or quadratic [default: moe]
    #[arg(long)]
    pub law: Option<LossLaw>,
    /// Size measure used as the law's scale argument [default: model-scale]
    #[arg(long, value_enum)]
    pub scale_argument: Option<ScaleArg>,
    /// Also fit on test-loss records.
    #[arg(long)]
    pub include_test: bool,
    /// Huber threshold on log-loss residuals [default: 1e-3]
    #[arg(long)]
    pub huber_delta: Option<f64>,
    /// Bootstrap resamples for confidence intervals; 0 disables [default: 0]
    #[arg(long)]
    pub bootstrap: Option<usize>,
    /// Confidence level of bootstrap intervals [default: 0.95]
    #[arg(long)]
    pub ci_level: Option<f64>,
    /// Model scale to extrapolate the fitted law to; repeatable.
    #[arg(long = "extrapolate-scale")]
    pub extrapolate_scale: Vec<f64>,
    /// Expert count used for extrapolated curves [default: 1]
    #[arg(long)]
    pub extrapolate_experts: Option<u32>,
    /// Comma-separated token counts for extrapolated curves
    /// [default: 50 log-spaced points from the smallest observed count to 10x the largest]
    #[arg(long, value_delimiter = ',')]
    pub extrapolate_tokens: Vec<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FitLossConfig {
    law: Option<LossLaw>,
    scale_argument: Option<ScaleArgument>,
    include_test: Option<bool>,
    huber_delta: Option<f64>,
    bootstrap: Option<usize>,
    ci_level: Option<f64>,
    seed: Option<u64>,
    format: Option<FormatArg>,
    extrapolate_scales: Option<Vec<f64>>,
    extrapolate_experts: Option<u32>,
    extrapolate_tokens: Option<Vec<f64>>,
}

#[derive(Debug, Serialize)]
struct ExtrapolationCurve {
    operation: &'static str,
    model_scale: f64,
    experts: u32,
    points: usize,
}

#[derive(Debug, Serialize)]
struct FitLossBody {
    operation: &'static str,
    law: LossLaw,
    coefficients: CoefficientsDocument,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    extrapolation: Vec<ExtrapolationCurve>,
}

pub fn run(args: FitLossArgs) -> CliResult<()> {
    let cfg: FitLossConfig = load_config(args.common.config.as_deref())?;
    let path = args.common.single_input()?;
    let runs = load_runs(path, args.common.run_format(path, cfg.format))?;
    let digest = runs.provenance.digest.clone();

    let law = args.law.or(cfg.law).unwrap_or(LossLaw::Moe);
    let huber_delta = args.huber_delta.or(cfg.huber_delta).unwrap_or(DEFAULT_HUBER_DELTA);
    let resamples = args.bootstrap.or(cfg.bootstrap).unwrap_or(0);
    let seed = args.common.seed.or(cfg.seed).unwrap_or(0);
    let options = LossFitOptions {
        scale_argument: args.scale_argument.map(Into::into).or(cfg.scale_argument).unwrap_or_default(),
        include_test: args.include_test || cfg.include_test.unwrap_or(false),
        huber_delta,
        bootstrap: (resamples > 0).then(|| BootstrapOptions {
            resamples,
            level: args.ci_level.or(cfg.ci_level).unwrap_or(0.95),
            seed,
        }),
        ..LossFitOptions::default()
    };
    let fit = fit_loss_law(&runs, law, &options)?;
    let coefficients = CoefficientsDocument::from_fit(&fit, huber_delta, &digest);

    let mut fitted = CsvSection::new(
        "fit",
        &["run_id", "loss_kind", "scale", "experts", "tokens", "loss", "predicted_loss"],
    );
    for r in runs.records() {
        let predicted = record_scale(r, options.scale_argument)
            .ok()
            .and_then(|s| fit.coefficients.predict(s, r.tokens, r.experts_or_dense()).ok());
        fitted.row([
            r.run_id.clone(),
            format!("{:?}", r.loss_kind).to_lowercase(),
            opt_num(record_scale(r, options.scale_argument).ok()),
            r.experts_or_dense().to_string(),
            num(r.tokens),
            num(r.loss),
            opt_num(predicted),
        ]);
    }
    let mut sections = vec![fitted];

    let scales = if args.extrapolate_scale.is_empty() {
        cfg.extrapolate_scales.unwrap_or_default()
    } else {
        args.extrapolate_scale
    };
    let mut curves = Vec::new();
    if !scales.is_empty() {
        let experts = args.extrapolate_experts.or(cfg.extrapolate_experts).unwrap_or(1);
        let tokens = if !args.extrapolate_tokens.is_empty() {
            args.extrapolate_tokens
        } else if let Some(t) = cfg.extrapolate_tokens {
            t
        } else {
            let (lo, hi) = runs
                .records()
                .fold((f64::INFINITY, 0.0f64), |(lo, hi), r| (lo.min(r.tokens), hi.max(r.tokens)));
            log_grid(lo, 10.0 * hi, 50)
        };
        let mut csv = CsvSection::new("extrapolation", &["model_scale", "experts", "tokens", "predicted_loss"]);
        for &scale in &scales {
            let curve = extrapolate(&fit.coefficients, scale, &tokens, experts)?;
            for &(d, l) in &curve {
                csv.row([num(scale), experts.to_string(), num(d), num(l)]);
            }
            curves.push(ExtrapolationCurve {
                operation: "extrapolate",
                model_scale: scale,
                experts,
                points: curve.len(),
            });
        }
        sections.push(csv);
    }

    let out = resolve_output(&args.common, "fit-loss.json");
    emit(
        &out,
        "fit-loss",
        vec![InputRef {
            role: "runs".into(),
            sha256: digest,
        }],
        options.bootstrap.map(|_| seed),
        FitLossBody {
            operation: "fit_loss_law",
            law,
            coefficients,
            extrapolation: curves,
        },
        sections,
        fit.warnings,
    )
}

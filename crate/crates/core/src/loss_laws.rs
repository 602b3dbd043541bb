//! Parametric loss laws and their fitting.
//!
//! | law        | prediction                                   |
//! |------------|----------------------------------------------|
//! | dense      | `A / S^α + B / D^β + σ` (S = model scale or params) |
//! | moe        | `A / (N^α · E^γ) + B / D^β + σ`, `1 ≤ E < 100` |
//! | clark      | `10^d / (P^a · E^b)`                          |
//! | quadratic  | `10^d / (P^a · E^(b + c·log10 P))`            |
//!
//! Fits minimize the Huber loss of `ln(predicted) − ln(observed)`. Dense and
//! MoE fits work in normalized coordinates (`N / N_ref`, `D / D_ref` with
//! geometric-mean references) and convert back afterwards.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fit_engine::{
    self, bootstrap_draws, check_bootstrap_args, percentile_intervals, FitError, FitOptions, FitProblem, FitResult,
    ParamTransform, DEFAULT_HUBER_DELTA,
};
use crate::run_data::{RunSet, TrainingRecord, MAX_EXPERTS_EXCLUSIVE};

#[derive(Debug, Error, PartialEq)]
pub enum LossLawError {
    #[error("{name} must be positive (got {value})")]
    NonPositiveArgument { name: &'static str, value: f64 },
    #[error("expert count {0} outside the MoE law's range 1 <= E < 100")]
    ExpertCountOutOfRange(u32),
    #[error("insufficient diversity: {0}")]
    InsufficientDiversity(String),
    #[error("missing field `{0}`")]
    MissingField(&'static str),
    #[error("token grid must be strictly increasing")]
    UnsortedGrid,
    #[error("{0} law has no token dependence; extrapolation over tokens is undefined")]
    UnsupportedLaw(LossLaw),
    #[error("invalid coefficients: {0}")]
    InvalidCoefficients(String),
    #[error(transparent)]
    Fit(#[from] FitError),
}

pub type Result<T> = std::result::Result<T, LossLawError>;

fn positive(name: &'static str, value: f64) -> Result<()> {
    if value.is_finite() && value > 0.0 {
        Ok(())
    } else {
        Err(LossLawError::NonPositiveArgument { name, value })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossLaw {
    Dense,
    Moe,
    Clark,
    Quadratic,
}

impl fmt::Display for LossLaw {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossLaw::Dense => "dense",
            LossLaw::Moe => "moe",
            LossLaw::Clark => "clark",
            LossLaw::Quadratic => "quadratic",
        })
    }
}

impl FromStr for LossLaw {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "dense" => Ok(LossLaw::Dense),
            "moe" => Ok(LossLaw::Moe),
            "clark" => Ok(LossLaw::Clark),
            "quadratic" => Ok(LossLaw::Quadratic),
            other => Err(format!("unknown law `{other}` (expected dense, moe, clark or quadratic)")),
        }
    }
}

/// Which size measure the dense law's first term uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ScaleArgument {
    /// Non-embedding FLOPs per token (N).
    #[default]
    ModelScale,
    /// Parameter count (P).
    Params,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DenseLawCoefficients {
    #[serde(rename = "A")]
    pub a: f64,
    #[serde(rename = "B")]
    pub b: f64,
    pub alpha: f64,
    pub beta: f64,
    pub sigma: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MoeLawCoefficients {
    #[serde(rename = "A")]
    pub a: f64,
    #[serde(rename = "B")]
    pub b: f64,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub sigma: f64,
}

impl From<DenseLawCoefficients> for MoeLawCoefficients {
    /// The dense law is the MoE law with `γ = 0`.
    fn from(d: DenseLawCoefficients) -> Self {
        Self {
            a: d.a,
            b: d.b,
            alpha: d.alpha,
            beta: d.beta,
            gamma: 0.0,
            sigma: d.sigma,
        }
    }
}

/// log10-space coefficients of the separable law.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClarkSeparableCoefficients {
    pub a: f64,
    pub b: f64,
    pub d: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadraticInteractionCoefficients {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
}

pub fn predict_dense(c: &DenseLawCoefficients, scale: f64, tokens: f64) -> Result<f64> {
    positive("scale", scale)?;
    positive("tokens", tokens)?;
    Ok(c.a / scale.powf(c.alpha) + c.b / tokens.powf(c.beta) + c.sigma)
}

pub fn check_experts(experts: u32) -> Result<()> {
    if (1..MAX_EXPERTS_EXCLUSIVE).contains(&experts) {
        Ok(())
    } else {
        Err(LossLawError::ExpertCountOutOfRange(experts))
    }
}

pub fn predict_moe(c: &MoeLawCoefficients, model_scale: f64, tokens: f64, experts: u32) -> Result<f64> {
    positive("model_scale", model_scale)?;
    positive("tokens", tokens)?;
    check_experts(experts)?;
    Ok(c.a / (model_scale.powf(c.alpha) * f64::from(experts).powf(c.gamma)) + c.b / tokens.powf(c.beta) + c.sigma)
}

pub fn predict_clark(c: &ClarkSeparableCoefficients, params: f64, experts: f64) -> Result<f64> {
    positive("params", params)?;
    positive("experts", experts)?;
    Ok(10f64.powf(c.d) / (params.powf(c.a) * experts.powf(c.b)))
}

pub fn predict_quadratic(c: &QuadraticInteractionCoefficients, params: f64, experts: f64) -> Result<f64> {
    positive("params", params)?;
    positive("experts", experts)?;
    let expert_exponent = c.b + c.c * params.log10();
    Ok(10f64.powf(c.d) / (params.powf(c.a) * experts.powf(expert_exponent)))
}

/// Coefficients of any of the four laws.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", content = "coefficients", rename_all = "snake_case")]
pub enum LawCoefficients {
    Dense(DenseLawCoefficients),
    Moe(MoeLawCoefficients),
    Clark(ClarkSeparableCoefficients),
    Quadratic(QuadraticInteractionCoefficients),
}

impl LawCoefficients {
    pub fn law(&self) -> LossLaw {
        match self {
            LawCoefficients::Dense(_) => LossLaw::Dense,
            LawCoefficients::Moe(_) => LossLaw::Moe,
            LawCoefficients::Clark(_) => LossLaw::Clark,
            LawCoefficients::Quadratic(_) => LossLaw::Quadratic,
        }
    }

    pub fn parameter_names(&self) -> &'static [&'static str] {
        parameter_names(self.law())
    }

    pub fn values(&self) -> Vec<f64> {
        match *self {
            LawCoefficients::Dense(c) => vec![c.a, c.b, c.alpha, c.beta, c.sigma],
            LawCoefficients::Moe(c) => vec![c.a, c.b, c.alpha, c.beta, c.gamma, c.sigma],
            LawCoefficients::Clark(c) => vec![c.a, c.b, c.d],
            LawCoefficients::Quadratic(c) => vec![c.a, c.b, c.c, c.d],
        }
    }

    pub fn from_values(law: LossLaw, v: &[f64]) -> Result<Self> {
        let need = parameter_names(law).len();
        if v.len() != need {
            return Err(LossLawError::InvalidCoefficients(format!("{law} law takes {need} values, got {}", v.len())));
        }
        Ok(match law {
            LossLaw::Dense => LawCoefficients::Dense(DenseLawCoefficients {
                a: v[0],
                b: v[1],
                alpha: v[2],
                beta: v[3],
                sigma: v[4],
            }),
            LossLaw::Moe => LawCoefficients::Moe(MoeLawCoefficients {
                a: v[0],
                b: v[1],
                alpha: v[2],
                beta: v[3],
                gamma: v[4],
                sigma: v[5],
            }),
            LossLaw::Clark => LawCoefficients::Clark(ClarkSeparableCoefficients { a: v[0], b: v[1], d: v[2] }),
            LossLaw::Quadratic => LawCoefficients::Quadratic(QuadraticInteractionCoefficients {
                a: v[0],
                b: v[1],
                c: v[2],
                d: v[3],
            }),
        })
    }

    /// Predicted loss. `scale` is N (or P for a params-scaled dense law);
    /// the separable laws read it as P and ignore `tokens`.
    pub fn predict(&self, scale: f64, tokens: f64, experts: u32) -> Result<f64> {
        match self {
            LawCoefficients::Dense(c) => predict_dense(c, scale, tokens),
            LawCoefficients::Moe(c) => predict_moe(c, scale, tokens, experts),
            LawCoefficients::Clark(c) => predict_clark(c, scale, f64::from(experts)),
            LawCoefficients::Quadratic(c) => predict_quadratic(c, scale, f64::from(experts)),
        }
    }
}

pub fn parameter_names(law: LossLaw) -> &'static [&'static str] {
    match law {
        LossLaw::Dense => &["A", "B", "alpha", "beta", "sigma"],
        LossLaw::Moe => &["A", "B", "alpha", "beta", "gamma", "sigma"],
        LossLaw::Clark => &["a", "b", "d"],
        LossLaw::Quadratic => &["a", "b", "c", "d"],
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapOptions {
    pub resamples: usize,
    pub level: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossFitOptions {
    pub scale_argument: ScaleArgument,
    /// Also fit test-loss records.
    pub include_test: bool,
    pub huber_delta: f64,
    pub fit: FitOptions,
    pub bootstrap: Option<BootstrapOptions>,
}

impl Default for LossFitOptions {
    fn default() -> Self {
        Self {
            scale_argument: ScaleArgument::ModelScale,
            include_test: false,
            huber_delta: DEFAULT_HUBER_DELTA,
            fit: FitOptions::default(),
            bootstrap: None,
        }
    }
}

/// Output of [`fit_loss_law`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossLawFit {
    pub coefficients: LawCoefficients,
    /// Diagnostics; `params` and intervals are on the natural scale in
    /// [`LawCoefficients::values`] order.
    pub fit: FitResult,
    pub scale_argument: ScaleArgument,
    pub warnings: Vec<String>,
}

/// One observation in normalized log coordinates.
#[derive(Debug, Clone, Copy)]
struct PowerRow {
    ln_scale: f64,
    ln_tokens: f64,
    ln_experts: f64,
    ln_loss: f64,
}

fn distinct(values: impl Iterator<Item = f64>) -> usize {
    values.map(f64::to_bits).collect::<BTreeSet<_>>().len()
}

/// The size measure `arg` selects from a record.
pub fn record_scale(r: &TrainingRecord, arg: ScaleArgument) -> Result<f64> {
    match arg {
        ScaleArgument::ModelScale => r.model_scale.ok_or(LossLawError::MissingField("model_scale")),
        ScaleArgument::Params => r.params.ok_or(LossLawError::MissingField("params")),
    }
}

fn geometric_mean(values: &[f64]) -> f64 {
    (values.iter().map(|v| v.ln()).sum::<f64>() / values.len() as f64).exp()
}

/// Values `seed · {0.1, 1, 10}`.
fn around(seed: f64) -> [f64; 3] {
    [seed * 0.1, seed, seed * 10.0]
}

const EXPONENT_STARTS: [f64; 3] = [0.05, 0.223_606_797_749_979, 1.0];

fn cartesian(axes: &[Vec<f64>]) -> Vec<Vec<f64>> {
    axes.iter().fold(vec![Vec::new()], |acc, axis| {
        acc.iter()
            .flat_map(|prefix| {
                axis.iter().map(move |&v| {
                    let mut p = prefix.clone();
                    p.push(v);
                    p
                })
            })
            .collect()
    })
}

/// Residual/Jacobian for `A'·e^{−α ln n − γ ln E} + B'·e^{−β ln d} + σ`.
/// Parameter layout: `[A', B', α, β, (γ,) σ]`.
fn power_problem<'a>(with_gamma: bool, huber_delta: f64, starts: Vec<Vec<f64>>) -> FitProblem<'a, PowerRow> {
    let sigma_idx = if with_gamma { 5 } else { 4 };
    let terms = move |p: &[f64], r: &PowerRow| {
        let gamma = if with_gamma { p[4] } else { 0.0 };
        let t1 = p[0] * (-p[2] * r.ln_scale - gamma * r.ln_experts).exp();
        let t2 = p[1] * (-p[3] * r.ln_tokens).exp();
        (t1, t2, t1 + t2 + p[sigma_idx])
    };
    let mut transforms = vec![
        ParamTransform::LogPositive,
        ParamTransform::LogPositive,
        ParamTransform::Identity,
        ParamTransform::Identity,
    ];
    if with_gamma {
        transforms.push(ParamTransform::Identity);
    }
    transforms.push(ParamTransform::LogPositive);
    FitProblem::new(transforms.len(), move |p: &[f64], r: &PowerRow| terms(p, r).2.ln() - r.ln_loss)
        .with_jacobian(move |p: &[f64], r: &PowerRow, out: &mut [f64]| {
            let (t1, t2, pred) = terms(p, r);
            out[0] = t1 / p[0] / pred;
            out[1] = t2 / p[1] / pred;
            out[2] = -t1 * r.ln_scale / pred;
            out[3] = -t2 * r.ln_tokens / pred;
            if with_gamma {
                out[4] = -t1 * r.ln_experts / pred;
            }
            out[sigma_idx] = 1.0 / pred;
        })
        .with_transforms(transforms)
        .with_huber_delta(huber_delta)
        .with_starts(starts)
}

/// Residual for `ln10·(d − a·lP − b·lE − c·lP·lE) − ln L` (c omitted for the
/// separable law). Rows reuse [`PowerRow`] with log10 values in the scale and
/// expert slots.
fn separable_problem<'a>(with_c: bool, huber_delta: f64, starts: Vec<Vec<f64>>) -> FitProblem<'a, PowerRow> {
    let ln10 = std::f64::consts::LN_10;
    let n = if with_c { 4 } else { 3 };
    FitProblem::new(n, move |p: &[f64], r: &PowerRow| {
        let (lp, le) = (r.ln_scale, r.ln_experts);
        let log10_pred = if with_c {
            p[3] - p[0] * lp - p[1] * le - p[2] * lp * le
        } else {
            p[2] - p[0] * lp - p[1] * le
        };
        ln10 * log10_pred - r.ln_loss
    })
    .with_jacobian(move |_p: &[f64], r: &PowerRow, out: &mut [f64]| {
        let (lp, le) = (r.ln_scale, r.ln_experts);
        out[0] = -ln10 * lp;
        out[1] = -ln10 * le;
        if with_c {
            out[2] = -ln10 * lp * le;
            out[3] = ln10;
        } else {
            out[2] = ln10;
        }
    })
    .with_huber_delta(huber_delta)
    .with_starts(starts)
}

/// Fit one of the four laws to the train records of `runs`.
///
/// Dense and MoE laws use every record. The separable laws describe final
/// loss as a function of size and expert count, so they use the last record
/// of each run. MoE records with `E ≥ 100` are dropped with a warning; when
/// all MoE records share one expert count, `γ` is not identifiable and is
/// fixed at zero.
pub fn fit_loss_law(runs: &RunSet, law: LossLaw, options: &LossFitOptions) -> Result<LossLawFit> {
    let mut warnings = Vec::new();
    let mut records: Vec<&TrainingRecord> = match law {
        LossLaw::Dense | LossLaw::Moe => runs.series.iter().flat_map(|s| s.records_of(options.include_test)).collect(),
        LossLaw::Clark | LossLaw::Quadratic => runs
            .series
            .iter()
            .filter_map(|s| {
                s.records.last().or(if options.include_test { s.test_records.last() } else { None })
            })
            .collect(),
    };
    if records.is_empty() {
        return Err(LossLawError::InsufficientDiversity("no train records".into()));
    }
    if matches!(law, LossLaw::Moe | LossLaw::Clark | LossLaw::Quadratic) && records.iter().any(|r| r.experts.is_none()) {
        return Err(LossLawError::MissingField("experts"));
    }
    if law == LossLaw::Moe {
        let before = records.len();
        records.retain(|r| r.experts_or_dense() < MAX_EXPERTS_EXCLUSIVE);
        let dropped = before - records.len();
        if dropped > 0 {
            warnings.push(format!(
                "excluded {dropped} record(s) with experts >= {MAX_EXPERTS_EXCLUSIVE}, outside the MoE law's validity range"
            ));
        }
        if records.is_empty() {
            return Err(LossLawError::InsufficientDiversity("no records with experts < 100".into()));
        }
    }

    let scale_arg = match law {
        LossLaw::Dense => options.scale_argument,
        LossLaw::Moe => ScaleArgument::ModelScale,
        LossLaw::Clark | LossLaw::Quadratic => ScaleArgument::Params,
    };
    let scales = records.iter().map(|r| record_scale(r, scale_arg)).collect::<Result<Vec<f64>>>()?;
    let tokens: Vec<f64> = records.iter().map(|r| r.tokens).collect();
    let experts: Vec<f64> = records.iter().map(|r| f64::from(r.experts_or_dense())).collect();

    if distinct(scales.iter().copied()) < 2 {
        return Err(LossLawError::InsufficientDiversity("need at least two distinct model scales".into()));
    }
    if matches!(law, LossLaw::Dense | LossLaw::Moe) && distinct(tokens.iter().copied()) < 2 {
        return Err(LossLawError::InsufficientDiversity("need at least two distinct token counts".into()));
    }
    let distinct_experts = distinct(experts.iter().copied());
    if law == LossLaw::Dense && distinct_experts > 1 {
        warnings.push("dense law fitted to records with differing expert counts".into());
    }

    let min_loss = records.iter().map(|r| r.loss).fold(f64::INFINITY, f64::min);
    let (fit, coefficients, problem_rows) = match law {
        LossLaw::Dense | LossLaw::Moe => {
            let with_gamma = law == LossLaw::Moe && distinct_experts > 1;
            if law == LossLaw::Moe && !with_gamma {
                warnings.push("all records share one expert count; gamma is not identifiable and was fixed at 0".into());
            }
            let n_ref = geometric_mean(&scales);
            let d_ref = geometric_mean(&tokens);
            let rows: Vec<PowerRow> = records
                .iter()
                .zip(scales.iter().zip(&tokens))
                .zip(&experts)
                .map(|((r, (&s, &d)), &e)| PowerRow {
                    ln_scale: (s / n_ref).ln(),
                    ln_tokens: (d / d_ref).ln(),
                    ln_experts: e.ln(),
                    ln_loss: r.loss.ln(),
                })
                .collect();
            let mut sorted: Vec<f64> = records.iter().map(|r| r.loss).collect();
            sorted.sort_by(f64::total_cmp);
            let amp_seed = sorted[sorted.len() / 2] / 4.0;
            let mut axes = vec![around(amp_seed).to_vec(), around(amp_seed).to_vec(), EXPONENT_STARTS.to_vec(), EXPONENT_STARTS.to_vec()];
            if with_gamma {
                axes.push(EXPONENT_STARTS.to_vec());
            }
            axes.push(vec![0.01 * min_loss, 0.1 * min_loss, 0.9 * min_loss]);
            let problem = power_problem(with_gamma, options.huber_delta, cartesian(&axes));
            let fit = fit_engine::fit(&problem, &rows, &options.fit)?;
            let to_natural = move |p: &[f64]| -> Vec<f64> {
                let a = p[0] * n_ref.powf(p[2]);
                let b = p[1] * d_ref.powf(p[3]);
                match (law, with_gamma) {
                    (LossLaw::Dense, _) => vec![a, b, p[2], p[3], p[4]],
                    (_, true) => vec![a, b, p[2], p[3], p[4], p[5]],
                    (_, false) => vec![a, b, p[2], p[3], 0.0, p[4]],
                }
            };
            let fit = with_intervals(&problem, &rows, fit, options, to_natural)?;
            let coefficients = LawCoefficients::from_values(law, &fit.params)?;
            (fit, coefficients, rows.len())
        }
        LossLaw::Clark | LossLaw::Quadratic => {
            let with_c = law == LossLaw::Quadratic;
            let rows: Vec<PowerRow> = records
                .iter()
                .zip(scales.iter().zip(&experts))
                .map(|(r, (&p, &e))| PowerRow {
                    ln_scale: p.log10(),
                    ln_tokens: 0.0,
                    ln_experts: e.log10(),
                    ln_loss: r.loss.ln(),
                })
                .collect();
            let mut sorted: Vec<f64> = records.iter().map(|r| r.loss).collect();
            sorted.sort_by(f64::total_cmp);
            let d_seed = sorted[sorted.len() / 2].log10();
            let mut axes = vec![EXPONENT_STARTS.to_vec(), EXPONENT_STARTS.to_vec()];
            if with_c {
                axes.push(vec![-0.01, 0.0, 0.01]);
            }
            axes.push(vec![d_seed - 1.0, d_seed, d_seed + 1.0]);
            let problem = separable_problem(with_c, options.huber_delta, cartesian(&axes));
            let fit = fit_engine::fit(&problem, &rows, &options.fit)?;
            let fit = with_intervals(&problem, &rows, fit, options, |p: &[f64]| p.to_vec())?;
            let coefficients = LawCoefficients::from_values(law, &fit.params)?;
            (fit, coefficients, rows.len())
        }
    };
    debug_assert_eq!(fit.n_data, problem_rows);
    if !fit.converged {
        warnings.push(format!("fit did not converge within {} iterations", options.fit.max_iter));
    }
    Ok(LossLawFit {
        coefficients,
        fit,
        scale_argument: scale_arg,
        warnings,
    })
}

/// Convert internal parameters to natural coefficients and attach bootstrap
/// intervals when requested.
fn with_intervals(
    problem: &FitProblem<'_, PowerRow>,
    rows: &[PowerRow],
    internal_fit: FitResult,
    options: &LossFitOptions,
    to_natural: impl Fn(&[f64]) -> Vec<f64>,
) -> Result<FitResult> {
    let mut out = internal_fit.clone();
    out.params = to_natural(&internal_fit.params);
    if let Some(b) = options.bootstrap {
        check_bootstrap_args(&internal_fit, b.resamples, b.level)?;
        let draws: Vec<Vec<f64>> = bootstrap_draws(problem, rows, &internal_fit.params, b.resamples, b.seed, &options.fit)
            .iter()
            .map(|d| to_natural(d))
            .collect();
        if draws.is_empty() {
            return Err(FitError::NotConverged.into());
        }
        let (lo, hi) = percentile_intervals(&draws, &out.params, b.level);
        out.ci_low = Some(lo);
        out.ci_high = Some(hi);
        out.ci_level = Some(b.level);
    }
    Ok(out)
}

/// Predicted losses at `target_scale` across `token_grid`.
pub fn extrapolate(coeffs: &LawCoefficients, target_scale: f64, token_grid: &[f64], experts: u32) -> Result<Vec<(f64, f64)>> {
    if matches!(coeffs, LawCoefficients::Clark(_) | LawCoefficients::Quadratic(_)) {
        return Err(LossLawError::UnsupportedLaw(coeffs.law()));
    }
    if token_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(LossLawError::UnsortedGrid);
    }
    token_grid
        .iter()
        .map(|&d| coeffs.predict(target_scale, d, experts).map(|l| (d, l)))
        .collect()
}

/// Serialized form of a fitted (or hand-specified) coefficient set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientsDocument {
    #[serde(flatten)]
    pub coefficients: LawCoefficients,
    pub scale_argument: ScaleArgument,
    pub parameter_names: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ci_low: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ci_high: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ci_level: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnostics: Option<FitDiagnostics>,
    #[serde(default)]
    pub input_digest: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub objective: f64,
    pub converged: bool,
    pub iterations: usize,
    pub n_data: usize,
    pub start_index: usize,
    pub huber_delta: f64,
}

impl CoefficientsDocument {
    pub fn from_fit(fit: &LossLawFit, huber_delta: f64, input_digest: &str) -> Self {
        Self {
            coefficients: fit.coefficients,
            scale_argument: fit.scale_argument,
            parameter_names: fit.coefficients.parameter_names().iter().map(|s| s.to_string()).collect(),
            ci_low: fit.fit.ci_low.clone(),
            ci_high: fit.fit.ci_high.clone(),
            ci_level: fit.fit.ci_level,
            diagnostics: Some(FitDiagnostics {
                objective: fit.fit.objective,
                converged: fit.fit.converged,
                iterations: fit.fit.iterations,
                n_data: fit.fit.n_data,
                start_index: fit.fit.start_index,
                huber_delta,
            }),
            input_digest: input_digest.to_string(),
        }
    }

    pub fn from_coefficients(coefficients: LawCoefficients) -> Self {
        Self {
            coefficients,
            scale_argument: ScaleArgument::default(),
            parameter_names: coefficients.parameter_names().iter().map(|s| s.to_string()).collect(),
            ci_low: None,
            ci_high: None,
            ci_level: None,
            diagnostics: None,
            input_digest: String::new(),
        }
    }
}

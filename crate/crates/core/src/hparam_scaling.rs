//! Batch-size and learning-rate scaling.
//!
//! Covers the simple gradient noise scale `B_noise = tr Σ / |G|²` (identity
//! Hessian), the steps/examples trade-off, per-contour optimum extraction
//! from hyperparameter sweeps, and power-law fits of the optima against loss.

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fit_engine::{fit_power_law, FitError};
use crate::run_data::IsoTokenContour;

pub use crate::fit_engine::PowerLawFit;

#[derive(Debug, Error)]
pub enum HparamError {
    #[error("batch sizes must differ (both are {0})")]
    EqualBatchSizes(f64),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("steps {steps} must exceed the minimum {s_min}")]
    StepsAtOrBelowMinimum { steps: f64, s_min: f64 },
    #[error("contour at token level {token_level} has {distinct} distinct knob values, need at least 3")]
    TooFewKnobValues { token_level: f64, distinct: usize },
    #[error("run {run_id} has no {knob} in its configuration")]
    MissingKnob { run_id: String, knob: Knob },
    #[error("only {usable} bracketed minima ({boundary} at the sweep boundary); need at least 3")]
    UnbracketedMinima { usable: usize, boundary: usize },
    #[error("heatmap row {row}: {reason}")]
    Heatmap { row: usize, reason: String },
    #[error(transparent)]
    Fit(#[from] FitError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, HparamError>;

fn positive(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(HparamError::InvalidArgument(format!("{name} must be positive and finite (got {v})")))
    }
}

/// Mean squared gradient norm measured at one batch size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatchNormSample {
    pub batch_size: f64,
    pub mean_sq_norm: f64,
    #[serde(default)]
    pub samples: usize,
}

/// Simple (identity-Hessian) gradient noise scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseScaleEstimate {
    pub grad_norm_sq: f64,
    pub trace_sigma: f64,
    /// `tr Σ / |G|²`; `None` when `|G|²` is zero but `tr Σ` is not.
    pub b_noise: Option<f64>,
    pub sample_count: usize,
    /// A raw estimate came out negative and was clamped to zero.
    pub clamped: bool,
}

/// Two-batch-size estimator under `E|G_B|² = |G|² + tr Σ / B`.
pub fn estimate_noise_scale(small: BatchNormSample, big: BatchNormSample) -> Result<NoiseScaleEstimate> {
    positive("batch size", small.batch_size)?;
    positive("batch size", big.batch_size)?;
    for v in [small.mean_sq_norm, big.mean_sq_norm] {
        if !(v.is_finite() && v >= 0.0) {
            return Err(HparamError::InvalidArgument(format!(
                "mean squared norm must be non-negative (got {v})"
            )));
        }
    }
    if small.batch_size == big.batch_size {
        return Err(HparamError::EqualBatchSizes(small.batch_size));
    }
    let (bs, gs, bb, gb) = (small.batch_size, small.mean_sq_norm, big.batch_size, big.mean_sq_norm);
    let g_raw = (bb * gb - bs * gs) / (bb - bs);
    let s_raw = (gs - gb) / (1.0 / bs - 1.0 / bb);
    let clamped = g_raw < 0.0 || s_raw < 0.0;
    let (g, s) = (g_raw.max(0.0), s_raw.max(0.0));
    let b_noise = if g > 0.0 {
        Some(s / g)
    } else if s == 0.0 {
        Some(0.0)
    } else {
        None
    };
    Ok(NoiseScaleEstimate {
        grad_norm_sq: g,
        trace_sigma: s,
        b_noise,
        sample_count: small.samples + big.samples,
        clamped,
    })
}

/// `ΔL_opt(B) = ΔL_max / (1 + B_noise / B)`.
pub fn loss_improvement(delta_l_max: f64, b_noise: f64, batch: f64) -> f64 {
    delta_l_max / (1.0 + b_noise / batch)
}

/// `(S/S_min − 1)(E/E_min − 1) = 1`, with E counted in training examples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TradeoffCurve {
    pub s_min: f64,
    pub e_min: f64,
}

impl TradeoffCurve {
    pub fn new(s_min: f64, e_min: f64) -> Result<Self> {
        positive("s_min", s_min)?;
        positive("e_min", e_min)?;
        Ok(Self { s_min, e_min })
    }
}

/// Examples needed when training for `steps` optimizer steps.
pub fn tradeoff(curve: &TradeoffCurve, steps: f64) -> Result<f64> {
    if steps.is_nan() || steps <= curve.s_min {
        return Err(HparamError::StepsAtOrBelowMinimum {
            steps,
            s_min: curve.s_min,
        });
    }
    Ok(curve.e_min * (1.0 + 1.0 / (steps / curve.s_min - 1.0)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrBatchRelation {
    pub eps_max: f64,
    pub b_noise: f64,
    pub optimizer: Optimizer,
}

impl LrBatchRelation {
    pub fn opt_lr(&self, batch: f64) -> f64 {
        match self.optimizer {
            Optimizer::Sgd => sgd_opt_lr(self, batch),
            Optimizer::Adam => adam_opt_lr(self, batch),
        }
    }
}

/// `ε_opt = ε_max / (1 + B_noise / B)`.
pub fn sgd_opt_lr(rel: &LrBatchRelation, batch: f64) -> f64 {
    rel.eps_max / (1.0 + rel.b_noise / batch)
}

/// `ε_opt = 2 ε_max / (√(B_noise/B) + √(B/B_noise))`, peaking at `B = B_noise`.
pub fn adam_opt_lr(rel: &LrBatchRelation, batch: f64) -> f64 {
    let x = (batch / rel.b_noise).sqrt();
    2.0 * rel.eps_max * x / (1.0 + x * x)
}

/// Which hyperparameter a sweep varies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Knob {
    BatchSize,
    LearningRate,
}

impl fmt::Display for Knob {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Knob::BatchSize => "batch_size",
            Knob::LearningRate => "learning_rate",
        })
    }
}

impl FromStr for Knob {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "batch_size" | "batch-size" | "batch" => Ok(Knob::BatchSize),
            "learning_rate" | "learning-rate" | "lr" => Ok(Knob::LearningRate),
            other => Err(format!("unknown knob `{other}` (expected batch_size or learning_rate)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeatmapPoint {
    pub token_level: f64,
    pub knob_value: f64,
    pub loss: f64,
}

/// Loss observations over (token level, knob value).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Heatmap {
    pub points: Vec<HeatmapPoint>,
}

pub const HEATMAP_COLUMNS: [&str; 3] = ["token_level", "knob_value", "loss"];

impl Heatmap {
    pub fn read_csv(reader: impl Read) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).comment(Some(b'#')).from_reader(reader);
        let headers = rdr.headers()?.clone();
        if headers.iter().collect::<Vec<_>>() != HEATMAP_COLUMNS {
            return Err(HparamError::Heatmap {
                row: 1,
                reason: format!("expected header {}", HEATMAP_COLUMNS.join(",")),
            });
        }
        let mut points = Vec::new();
        for (i, row) in rdr.deserialize::<HeatmapPoint>().enumerate() {
            let row_no = i + 2;
            let p = row.map_err(|e| HparamError::Heatmap {
                row: row_no,
                reason: e.to_string(),
            })?;
            if !(p.token_level > 0.0 && p.token_level.is_finite() && p.knob_value > 0.0 && p.knob_value.is_finite())
                || !p.loss.is_finite()
            {
                return Err(HparamError::Heatmap {
                    row: row_no,
                    reason: "token_level and knob_value must be positive, loss finite".into(),
                });
            }
            points.push(p);
        }
        Ok(Self { points })
    }

    pub fn write_csv(&self, writer: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        for p in &self.points {
            w.serialize(p)?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    /// Points grouped by token level, levels ascending.
    pub fn contours(&self) -> Vec<(f64, Vec<(f64, f64)>)> {
        let mut pts = self.points.clone();
        pts.sort_by(|a, b| a.token_level.total_cmp(&b.token_level).then(a.knob_value.total_cmp(&b.knob_value)));
        let mut out: Vec<(f64, Vec<(f64, f64)>)> = Vec::new();
        for p in pts {
            match out.last_mut() {
                Some((level, v)) if *level == p.token_level => v.push((p.knob_value, p.loss)),
                _ => out.push((p.token_level, vec![(p.knob_value, p.loss)])),
            }
        }
        out
    }
}

/// Builds a heatmap from iso-token contours of a hyperparameter sweep, taking
/// the knob value from each run's configuration.
pub fn heatmap_from_contours(contours: &[IsoTokenContour], knob: Knob) -> Result<Heatmap> {
    let mut points = Vec::new();
    for c in contours {
        for e in &c.entries {
            let value = match knob {
                Knob::BatchSize => e.config.batch_size.map(|b| b as f64),
                Knob::LearningRate => e.config.learning_rate,
            }
            .ok_or_else(|| HparamError::MissingKnob {
                run_id: e.run_id.clone(),
                knob,
            })?;
            points.push(HeatmapPoint {
                token_level: c.token_level,
                knob_value: value,
                loss: e.loss,
            });
        }
    }
    Ok(Heatmap { points })
}

/// Loss-minimizing knob value on one contour.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContourMinimum {
    pub token_level: f64,
    pub knob: Knob,
    pub loss_min: f64,
    pub knob_opt: f64,
    /// The optimum was not bracketed by the sweep: either the observed
    /// minimum is an end point or the vertex fell outside the swept range.
    pub at_boundary: bool,
}

fn contour_minimum(token_level: f64, knob: Knob, obs: &[(f64, f64)]) -> Result<ContourMinimum> {
    let mut knobs: Vec<f64> = obs.iter().map(|o| o.0).collect();
    knobs.sort_by(f64::total_cmp);
    knobs.dedup();
    if knobs.len() < 3 {
        return Err(HparamError::TooFewKnobValues {
            token_level,
            distinct: knobs.len(),
        });
    }
    // loss = c0 + c1 u + c2 u² in standardized u = (ln knob − m) / s
    let logs: Vec<f64> = obs.iter().map(|o| o.0.ln()).collect();
    let n = logs.len() as f64;
    let m = logs.iter().sum::<f64>() / n;
    let s = (logs.iter().map(|l| (l - m).powi(2)).sum::<f64>() / n).sqrt();
    let mut ata = Matrix3::zeros();
    let mut aty = Vector3::zeros();
    for (l, &(_, y)) in logs.iter().zip(obs) {
        let u = (l - m) / s;
        let row = Vector3::new(1.0, u, u * u);
        ata += row * row.transpose();
        aty += row * y;
    }
    let coef = ata
        .lu()
        .solve(&aty)
        .ok_or_else(|| HparamError::InvalidArgument(format!("singular parabola fit at token level {token_level}")))?;
    let eval = |u: f64| coef[0] + coef[1] * u + coef[2] * u * u;
    let (u_lo, u_hi) = ((knobs[0].ln() - m) / s, (knobs[knobs.len() - 1].ln() - m) / s);
    // an observed minimum on the sweep edge means the optimum was not bracketed
    let mean_loss = |k: f64| {
        let ys: Vec<f64> = obs.iter().filter(|o| o.0 == k).map(|o| o.1).collect();
        ys.iter().sum::<f64>() / ys.len() as f64
    };
    let observed_best = (0..knobs.len())
        .min_by(|&i, &j| mean_loss(knobs[i]).total_cmp(&mean_loss(knobs[j])))
        .expect("at least three knob values");
    let (u_best, at_boundary) = if observed_best == 0 {
        (u_lo, true)
    } else if observed_best == knobs.len() - 1 {
        (u_hi, true)
    } else if coef[2] > 0.0 {
        let v = -coef[1] / (2.0 * coef[2]);
        if v < u_lo {
            (u_lo, true)
        } else if v > u_hi {
            (u_hi, true)
        } else {
            (v, false)
        }
    } else if eval(u_hi) < eval(u_lo) {
        (u_hi, true)
    } else {
        (u_lo, true)
    };
    let knob_opt = if at_boundary {
        if u_best == u_hi {
            knobs[knobs.len() - 1]
        } else {
            knobs[0]
        }
    } else {
        (m + s * u_best).exp()
    };
    Ok(ContourMinimum {
        token_level,
        knob,
        loss_min: eval(u_best),
        knob_opt,
        at_boundary,
    })
}

/// Fits a parabola in ln(knob) to every contour and returns its clipped vertex.
pub fn extract_contour_minima(heat: &Heatmap, knob: Knob) -> Result<Vec<ContourMinimum>> {
    heat.contours()
        .par_iter()
        .map(|(level, obs)| contour_minimum(*level, knob, obs))
        .collect()
}

/// Which minima enter a power-law fit.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MinimaFitOptions {
    /// Keep optima that sit on the sweep edge.
    pub include_boundary: bool,
}

fn fit_knob_law(minima: &[ContourMinimum], knob: Knob, options: MinimaFitOptions) -> Result<PowerLawFit> {
    if let Some(m) = minima.iter().find(|m| m.knob != knob) {
        return Err(HparamError::InvalidArgument(format!(
            "expected {knob} minima, got {} at token level {}",
            m.knob, m.token_level
        )));
    }
    let used: Vec<(f64, f64)> = minima
        .iter()
        .filter(|m| options.include_boundary || !m.at_boundary)
        .map(|m| (m.loss_min, m.knob_opt))
        .collect();
    let boundary = minima.len() - used.len();
    if used.len() < 3 && boundary > 0 {
        return Err(HparamError::UnbracketedMinima {
            usable: used.len(),
            boundary,
        });
    }
    Ok(fit_power_law(&used)?)
}

/// `B_opt ≈ λ_B / L^α_B` over batch-size minima.
pub fn fit_bopt_law(minima: &[ContourMinimum], options: MinimaFitOptions) -> Result<PowerLawFit> {
    fit_knob_law(minima, Knob::BatchSize, options)
}

/// `ε_opt ≈ λ_ε / L^α_ε` over learning-rate minima.
pub fn fit_epsopt_law(minima: &[ContourMinimum], options: MinimaFitOptions) -> Result<PowerLawFit> {
    fit_knob_law(minima, Knob::LearningRate, options)
}

/// Intersection over union of the two fits' loss ranges, measured in log loss.
pub fn interval_overlap(a: &PowerLawFit, b: &PowerLawFit) -> f64 {
    let (a_lo, a_hi) = (a.loss_range.0.ln(), a.loss_range.1.ln());
    let (b_lo, b_hi) = (b.loss_range.0.ln(), b.loss_range.1.ln());
    let inter = (a_hi.min(b_hi) - a_lo.max(b_lo)).max(0.0);
    let union = a_hi.max(b_hi) - a_lo.min(b_lo);
    if union <= 0.0 {
        return if a.loss_range == b.loss_range { 1.0 } else { 0.0 };
    }
    (inter / union).clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample(b: f64, g: f64) -> BatchNormSample {
        BatchNormSample {
            batch_size: b,
            mean_sq_norm: g,
            samples: 1,
        }
    }

    #[test]
    fn two_batch_worked_example() {
        let est = estimate_noise_scale(sample(1.0, 101.0), sample(100.0, 2.0)).unwrap();
        assert_eq!(est.grad_norm_sq, 1.0);
        assert_eq!(est.trace_sigma, 100.0);
        assert_eq!(est.b_noise, Some(100.0));
        assert!(!est.clamped);
        // argument order does not matter
        let rev = estimate_noise_scale(sample(100.0, 2.0), sample(1.0, 101.0)).unwrap();
        assert_eq!(rev.b_noise, Some(100.0));
    }

    #[test]
    fn noiseless_and_degenerate_inputs() {
        let est = estimate_noise_scale(sample(4.0, 3.0), sample(64.0, 3.0)).unwrap();
        assert_eq!(est.trace_sigma, 0.0);
        assert_eq!(est.b_noise, Some(0.0));
        assert!(matches!(
            estimate_noise_scale(sample(8.0, 3.0), sample(8.0, 2.0)),
            Err(HparamError::EqualBatchSizes(_))
        ));
        // small-batch norm below big-batch norm: negative trace, clamped
        let c = estimate_noise_scale(sample(1.0, 1.0), sample(10.0, 2.0)).unwrap();
        assert!(c.clamped);
        assert_eq!(c.trace_sigma, 0.0);
    }

    #[test]
    fn loss_improvement_examples() {
        assert_eq!(loss_improvement(3.0, 50.0, 50.0), 1.5);
        assert_eq!(loss_improvement(3.0, 0.0, 7.0), 3.0);
        assert_eq!(loss_improvement(1.0, 300.0, 100.0), 0.25);
    }

    #[test]
    fn tradeoff_examples() {
        let c = TradeoffCurve::new(100.0, 1e6).unwrap();
        assert_eq!(tradeoff(&c, 200.0).unwrap(), 2e6);
        assert!((tradeoff(&c, 150.0).unwrap() - 3e6).abs() < 1e-6);
        assert!((tradeoff(&c, 1e12).unwrap() / 1e6 - 1.0).abs() < 1e-9);
        assert!(matches!(tradeoff(&c, 100.0), Err(HparamError::StepsAtOrBelowMinimum { .. })));
    }

    #[test]
    fn learning_rate_relations() {
        let sgd = LrBatchRelation { eps_max: 0.1, b_noise: 1000.0, optimizer: Optimizer::Sgd };
        assert_eq!(sgd_opt_lr(&sgd, 1000.0), 0.05);
        let small = sgd_opt_lr(&sgd, 10.0);
        assert!((small - 0.1 / 101.0).abs() < 1e-15);
        assert!((small / 1e-3 - 1.0).abs() < 0.01);
        assert!((sgd_opt_lr(&sgd, 1e15) - 0.1).abs() < 1e-12);

        let adam = LrBatchRelation { optimizer: Optimizer::Adam, ..sgd };
        assert_eq!(adam_opt_lr(&adam, 1000.0), 0.1);
        assert!((adam_opt_lr(&adam, 250.0) - 0.08).abs() < 1e-15);
        assert_eq!(adam.opt_lr(1000.0), 0.1);
    }

    #[test]
    fn adam_unique_maximum_on_log_grid() {
        let adam = LrBatchRelation { eps_max: 3e-4, b_noise: 512.0, optimizer: Optimizer::Adam };
        let grid: Vec<f64> = (0..1000).map(|i| 512.0 * 10f64.powf(-3.0 + 6.0 * i as f64 / 999.0)).collect();
        let vals: Vec<f64> = grid.iter().map(|&b| adam_opt_lr(&adam, b)).collect();
        let peak = vals.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
        assert!(vals[..peak].windows(2).all(|w| w[0] < w[1]));
        assert!(vals[peak..].windows(2).all(|w| w[0] > w[1]));
        assert!((grid[peak] / 512.0).ln().abs() <= 6.0 * 10f64.ln() / 999.0);
    }

    fn heat(level: f64, pts: &[(f64, f64)]) -> Heatmap {
        Heatmap {
            points: pts
                .iter()
                .map(|&(k, l)| HeatmapPoint { token_level: level, knob_value: k, loss: l })
                .collect(),
        }
    }

    #[test]
    fn parabola_vertex_recovered() {
        let pts: Vec<(f64, f64)> = [32.0, 64.0, 128.0, 512.0, 1024.0, 4096.0]
            .iter()
            .map(|&k: &f64| (k, 2.5 + 0.03 * (k.ln() - 256f64.ln()).powi(2)))
            .collect();
        let m = extract_contour_minima(&heat(1e9, &pts), Knob::BatchSize).unwrap();
        assert_eq!(m.len(), 1);
        assert!((m[0].knob_opt - 256.0).abs() < 1e-6);
        assert!((m[0].loss_min - 2.5).abs() < 1e-9);
        assert!(!m[0].at_boundary);
    }

    #[test]
    fn monotone_contour_clips_to_edge() {
        let pts = [(1e-4, 3.0), (3e-4, 2.9), (1e-3, 2.85), (3e-3, 2.84)];
        let m = extract_contour_minima(&heat(1e9, &pts), Knob::LearningRate).unwrap();
        assert_eq!(m[0].knob_opt, 3e-3);
        assert!(m[0].at_boundary);
        let err = extract_contour_minima(&heat(5e8, &pts[..2]), Knob::LearningRate).unwrap_err();
        assert!(matches!(err, HparamError::TooFewKnobValues { distinct: 2, .. }));
    }

    fn minima_from(f: impl Fn(f64) -> f64, knob: Knob) -> Vec<ContourMinimum> {
        [2.2, 2.5, 2.9, 3.3, 3.8]
            .iter()
            .enumerate()
            .map(|(i, &l)| ContourMinimum {
                token_level: 1e9 * (i + 1) as f64,
                knob,
                loss_min: l,
                knob_opt: f(l),
                at_boundary: false,
            })
            .collect()
    }

    #[test]
    fn power_law_fits_of_minima() {
        let o = MinimaFitOptions::default();
        let b = fit_bopt_law(&minima_from(|l| 1000.0 / (l * l), Knob::BatchSize), o).unwrap();
        assert!((b.lambda - 1000.0).abs() < 1e-6 * 1000.0);
        assert!((b.alpha_exp - 2.0).abs() < 1e-6);
        assert!(b.predict(2.0) > b.predict(3.0));
        let flat = fit_bopt_law(&minima_from(|_| 512.0, Knob::BatchSize), o).unwrap();
        assert!(flat.alpha_exp.abs() < 1e-12);

        let e = fit_epsopt_law(&minima_from(|l| 0.01 / l, Knob::LearningRate), o).unwrap();
        assert!((e.lambda - 0.01).abs() < 1e-8);
        assert!((e.alpha_exp - 1.0).abs() < 1e-6);
        let (lo, hi) = (0.01 / 3.8, 0.01 / 2.2);
        for l in [2.2, 2.7, 3.8] {
            let v = e.predict(l);
            assert!(v >= lo * (1.0 - 1e-9) && v <= hi * (1.0 + 1e-9));
        }
        assert!(fit_epsopt_law(&minima_from(|_| 3e-4, Knob::LearningRate), o).unwrap().alpha_exp.abs() < 1e-12);
        assert!(fit_bopt_law(&minima_from(|_| 3e-4, Knob::LearningRate), o).is_err());
    }

    #[test]
    fn boundary_minima_are_excluded_by_default() {
        let mut m = minima_from(|l| 1000.0 / (l * l), Knob::BatchSize);
        for x in m.iter_mut().skip(2) {
            x.at_boundary = true;
        }
        assert!(matches!(
            fit_bopt_law(&m, MinimaFitOptions::default()),
            Err(HparamError::UnbracketedMinima { usable: 2, boundary: 3 })
        ));
        assert!(fit_bopt_law(&m, MinimaFitOptions { include_boundary: true }).is_ok());
    }

    fn range_fit(lo: f64, hi: f64) -> PowerLawFit {
        PowerLawFit { lambda: 1.0, alpha_exp: 1.0, stderr: 0.0, loss_range: (lo, hi), n_points: 3 }
    }

    #[test]
    fn overlap_examples() {
        assert_eq!(interval_overlap(&range_fit(2.0, 3.0), &range_fit(2.0, 3.0)), 1.0);
        assert_eq!(interval_overlap(&range_fit(2.0, 3.0), &range_fit(3.5, 4.0)), 0.0);
        assert!((interval_overlap(&range_fit(1.0, 4.0), &range_fit(2.0, 8.0)) - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn smaller_lambda_dominates_at_matched_exponent() {
        let a = PowerLawFit { lambda: 800.0, ..range_fit(2.0, 3.5) };
        let b = PowerLawFit { lambda: 1000.0, ..range_fit(2.3, 4.0) };
        for i in 0..=50 {
            let l = 2.3 + (3.5 - 2.3) * i as f64 / 50.0;
            assert!(a.predict(l) < b.predict(l));
        }
    }

    #[test]
    fn heatmap_csv_round_trip() {
        let h = heat(1e9, &[(32.0, 2.9), (64.0, 2.85), (128.0, 2.87)]);
        let mut buf = Vec::new();
        h.write_csv(&mut buf).unwrap();
        assert!(String::from_utf8_lossy(&buf).starts_with("token_level,knob_value,loss\n"));
        assert_eq!(Heatmap::read_csv(&buf[..]).unwrap(), h);
        let bad = b"token_level,knob_value,loss\n1e9,-3,2.0\n";
        assert!(matches!(Heatmap::read_csv(&bad[..]), Err(HparamError::Heatmap { row: 2, .. })));
    }

    proptest! {
        #[test]
        fn adam_symmetry(lb in -2.0f64..6.0, lx in -3.0f64..3.0, eps in 1e-5f64..1.0) {
            let b_noise = 10f64.powf(lb);
            let batch = b_noise * 10f64.powf(lx);
            let rel = LrBatchRelation { eps_max: eps, b_noise, optimizer: Optimizer::Adam };
            let mirrored = b_noise * b_noise / batch;
            prop_assert!((adam_opt_lr(&rel, batch) - adam_opt_lr(&rel, mirrored)).abs() <= 1e-12 * eps);
        }

        #[test]
        fn adam_square_root_regime(lb in 4.0f64..8.0, lx in -10.0f64..-4.0) {
            let b_noise = 10f64.powf(lb);
            let batch = b_noise * 10f64.powf(lx);
            let rel = LrBatchRelation { eps_max: 1.0, b_noise, optimizer: Optimizer::Adam };
            let approx = 2.0 * (batch / b_noise).sqrt();
            prop_assert!((adam_opt_lr(&rel, batch) / approx - 1.0).abs() < 0.01);
        }

        #[test]
        fn improvement_complement(x in 1e-6f64..1e6) {
            let s = loss_improvement(1.0, x, 1.0) + loss_improvement(1.0, 1.0, x);
            prop_assert!((s - 1.0).abs() < 1e-12);
        }

        #[test]
        fn sgd_monotone_and_linear_regime(lb in 1.0f64..6.0, a in 0.0f64..1.0, b in 0.0f64..1.0) {
            let b_noise = 10f64.powf(lb);
            let rel = LrBatchRelation { eps_max: 0.5, b_noise, optimizer: Optimizer::Sgd };
            let (lo, hi) = (b_noise * 10f64.powf(-3.0 + 6.0 * a.min(b)), b_noise * 10f64.powf(-3.0 + 6.0 * a.max(b)));
            prop_assert!(sgd_opt_lr(&rel, lo) <= sgd_opt_lr(&rel, hi));
            let tiny = b_noise / 100.0 * a.max(1e-6);
            prop_assert!((sgd_opt_lr(&rel, tiny) / (0.5 * tiny / b_noise) - 1.0).abs() < 0.02);
        }

        #[test]
        fn tradeoff_identity(ls in 0.0001f64..6.0) {
            let c = TradeoffCurve::new(1e3, 3e7).unwrap();
            let s = 1e3 * (1.0 + 10f64.powf(ls - 3.0));
            let e = tradeoff(&c, s).unwrap();
            prop_assert!(((s / c.s_min - 1.0) * (e / c.e_min - 1.0) - 1.0).abs() < 1e-12);
        }
    }
}

//! Robust nonlinear least squares.
//!
//! [`fit`] runs Levenberg-Marquardt from every start in a [`FitProblem`] and
//! keeps the best result. The objective is the Huber loss of the residuals;
//! each iteration solves the iteratively-reweighted normal equations
//! `(JᵀWJ + λ·diag(JᵀWJ)) δ = −Jᵀψ(r)`.
//!
//! Parameters marked [`ParamTransform::LogPositive`] are optimized as `ln θ`
//! so they stay strictly positive.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum FitError {
    #[error("degenerate problem: {rows} data rows for {params} parameters")]
    DegenerateProblem { rows: usize, params: usize },
    #[error("non-finite residual at data row {0}")]
    NonFiniteResidual(usize),
    #[error("invalid problem: {0}")]
    InvalidProblem(String),
    #[error("fit did not converge; bootstrap needs a converged fit")]
    NotConverged,
    #[error("need at least {need} bootstrap resamples, got {got}")]
    TooFewResamples { need: usize, got: usize },
    #[error("power-law fit needs at least 3 points, got {0}")]
    TooFewPoints(usize),
    #[error("power-law coordinates must be positive (point {index}: ({x}, {y}))")]
    NonPositiveCoordinate { index: usize, x: f64, y: f64 },
    #[error("all abscissae are equal; slope is undefined")]
    DegenerateAbscissa,
}

pub type Result<T> = std::result::Result<T, FitError>;

/// Huber delta for log-space loss-law residuals.
pub const DEFAULT_HUBER_DELTA: f64 = 1e-3;

/// Minimum resample count accepted by [`bootstrap_ci`].
pub const MIN_BOOTSTRAP_RESAMPLES: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamTransform {
    LogPositive,
    Identity,
}

impl ParamTransform {
    fn to_internal(self, v: f64) -> f64 {
        match self {
            ParamTransform::LogPositive => v.ln(),
            ParamTransform::Identity => v,
        }
    }

    fn to_natural(self, u: f64) -> f64 {
        match self {
            ParamTransform::LogPositive => u.exp(),
            ParamTransform::Identity => u,
        }
    }
}

pub type ResidualFn<'a, R> = dyn Fn(&[f64], &R) -> f64 + Sync + Send + 'a;
/// Writes `∂residual/∂θ` (natural parameters) into the output slice.
pub type JacobianFn<'a, R> = dyn Fn(&[f64], &R, &mut [f64]) + Sync + Send + 'a;

pub struct FitProblem<'a, R> {
    pub residual: Box<ResidualFn<'a, R>>,
    pub jacobian: Option<Box<JacobianFn<'a, R>>>,
    pub param_count: usize,
    pub transforms: Vec<ParamTransform>,
    pub huber_delta: f64,
    /// Initial parameter vectors on the natural scale.
    pub starts: Vec<Vec<f64>>,
}

impl<'a, R> FitProblem<'a, R> {
    pub fn new(
        param_count: usize,
        residual: impl Fn(&[f64], &R) -> f64 + Sync + Send + 'a,
    ) -> Self {
        Self {
            residual: Box::new(residual),
            jacobian: None,
            param_count,
            transforms: vec![ParamTransform::Identity; param_count],
            huber_delta: DEFAULT_HUBER_DELTA,
            starts: Vec::new(),
        }
    }

    pub fn with_jacobian(mut self, jac: impl Fn(&[f64], &R, &mut [f64]) + Sync + Send + 'a) -> Self {
        self.jacobian = Some(Box::new(jac));
        self
    }

    pub fn with_transforms(mut self, transforms: Vec<ParamTransform>) -> Self {
        self.transforms = transforms;
        self
    }

    pub fn with_huber_delta(mut self, delta: f64) -> Self {
        self.huber_delta = delta;
        self
    }

    pub fn with_starts(mut self, starts: Vec<Vec<f64>>) -> Self {
        self.starts = starts;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.param_count == 0 {
            return Err(FitError::InvalidProblem("param_count must be positive".into()));
        }
        if self.transforms.len() != self.param_count {
            return Err(FitError::InvalidProblem(format!(
                "{} transforms for {} parameters",
                self.transforms.len(),
                self.param_count
            )));
        }
        if !(self.huber_delta.is_finite() && self.huber_delta > 0.0) {
            return Err(FitError::InvalidProblem("huber_delta must be positive".into()));
        }
        if self.starts.is_empty() {
            return Err(FitError::InvalidProblem("at least one start is required".into()));
        }
        for (i, s) in self.starts.iter().enumerate() {
            if s.len() != self.param_count {
                return Err(FitError::InvalidProblem(format!("start {i} has {} values", s.len())));
            }
            for (v, t) in s.iter().zip(&self.transforms) {
                let ok = match t {
                    ParamTransform::LogPositive => v.is_finite() && *v > 0.0,
                    ParamTransform::Identity => v.is_finite(),
                };
                if !ok {
                    return Err(FitError::InvalidProblem(format!("start {i} value {v} outside its transform domain")));
                }
            }
        }
        Ok(())
    }

    fn natural(&self, internal: &[f64]) -> Vec<f64> {
        internal.iter().zip(&self.transforms).map(|(&u, t)| t.to_natural(u)).collect()
    }

    fn internal(&self, natural: &[f64]) -> Vec<f64> {
        natural.iter().zip(&self.transforms).map(|(&v, t)| t.to_internal(v)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub max_iter: usize,
    pub grad_tol: f64,
    pub step_tol: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            max_iter: 300,
            grad_tol: 1e-10,
            step_tol: 1e-10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    /// Parameters on the natural scale.
    pub params: Vec<f64>,
    pub objective: f64,
    pub converged: bool,
    pub iterations: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ci_low: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ci_high: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ci_level: Option<f64>,
    pub n_data: usize,
    /// Index of the start that produced this result.
    pub start_index: usize,
}

/// Huber loss of a single residual.
pub fn huber(r: f64, delta: f64) -> f64 {
    let a = r.abs();
    if a <= delta {
        0.5 * r * r
    } else {
        delta * (a - 0.5 * delta)
    }
}

/// Sum of Huber losses.
pub fn huber_objective(residuals: &[f64], delta: f64) -> f64 {
    residuals.iter().map(|&r| huber(r, delta)).sum()
}

fn residuals_at<R>(problem: &FitProblem<'_, R>, natural: &[f64], rows: &[&R]) -> Vec<f64> {
    rows.iter().map(|row| (problem.residual)(natural, row)).collect()
}

/// Central-difference Jacobian in internal coordinates.
fn internal_jacobian<R>(problem: &FitProblem<'_, R>, internal: &[f64], rows: &[&R]) -> DMatrix<f64> {
    let m = rows.len();
    let p = problem.param_count;
    let mut jac = DMatrix::zeros(m, p);
    let natural = problem.natural(internal);
    if let Some(analytic) = &problem.jacobian {
        let mut buf = vec![0.0; p];
        for (i, row) in rows.iter().enumerate() {
            analytic(&natural, row, &mut buf);
            for j in 0..p {
                // chain rule through θ = exp(u)
                let scale = match problem.transforms[j] {
                    ParamTransform::LogPositive => natural[j],
                    ParamTransform::Identity => 1.0,
                };
                jac[(i, j)] = buf[j] * scale;
            }
        }
        return jac;
    }
    let mut plus = internal.to_vec();
    let mut minus = internal.to_vec();
    for j in 0..p {
        let h = 1e-6 * internal[j].abs().max(1.0);
        plus[j] = internal[j] + h;
        minus[j] = internal[j] - h;
        let np = problem.natural(&plus);
        let nm = problem.natural(&minus);
        for (i, row) in rows.iter().enumerate() {
            jac[(i, j)] = ((problem.residual)(&np, row) - (problem.residual)(&nm, row)) / (2.0 * h);
        }
        plus[j] = internal[j];
        minus[j] = internal[j];
    }
    jac
}

/// Central-difference Jacobian of the residuals with respect to the natural
/// parameters, one row per data row. Used to check analytic Jacobians.
pub fn numerical_jacobian<R>(problem: &FitProblem<'_, R>, natural: &[f64], data: &[R]) -> Vec<Vec<f64>> {
    let p = natural.len();
    data.iter()
        .map(|row| {
            (0..p)
                .map(|j| {
                    let h = 1e-6 * natural[j].abs().max(1.0);
                    let mut a = natural.to_vec();
                    let mut b = natural.to_vec();
                    a[j] += h;
                    b[j] -= h;
                    ((problem.residual)(&a, row) - (problem.residual)(&b, row)) / (2.0 * h)
                })
                .collect()
        })
        .collect()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Single Levenberg-Marquardt run from one start.
fn lm_from_start<R>(
    problem: &FitProblem<'_, R>,
    rows: &[&R],
    start: &[f64],
    start_index: usize,
    options: &FitOptions,
) -> Option<FitResult> {
    let delta = problem.huber_delta;
    let p = problem.param_count;
    let mut u = problem.internal(start);
    let mut r = residuals_at(problem, start, rows);
    if r.iter().any(|x| !x.is_finite()) {
        return None;
    }
    let mut obj = huber_objective(&r, delta);
    let mut lambda = 1e-3;
    let mut converged = obj == 0.0;
    let mut iterations = 0;

    while !converged && iterations < options.max_iter {
        iterations += 1;
        let jac = internal_jacobian(problem, &u, rows);
        let mut grad = DVector::zeros(p);
        let mut normal = DMatrix::zeros(p, p);
        for (i, &ri) in r.iter().enumerate() {
            let (psi, w) = if ri.abs() <= delta { (ri, 1.0) } else { (delta * ri.signum(), delta / ri.abs()) };
            let row = jac.row(i);
            grad += row.transpose() * psi;
            normal += row.transpose() * row * w;
        }
        if grad.amax() < options.grad_tol {
            converged = true;
            break;
        }
        let max_diag = (0..p).map(|j| normal[(j, j)]).fold(0.0f64, f64::max).max(f64::MIN_POSITIVE);
        let mut accepted = false;
        while lambda < 1e20 {
            let mut damped = normal.clone();
            for j in 0..p {
                damped[(j, j)] += lambda * normal[(j, j)].max(1e-12 * max_diag);
            }
            let Some(chol) = damped.cholesky() else {
                lambda *= 10.0;
                continue;
            };
            let step = chol.solve(&(-&grad));
            let trial: Vec<f64> = u.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
            let trial_nat = problem.natural(&trial);
            let trial_r = residuals_at(problem, &trial_nat, rows);
            let trial_obj = huber_objective(&trial_r, delta);
            let step_norm = norm(step.as_slice());
            let small_step = step_norm < options.step_tol * (norm(&u) + options.step_tol);
            if trial_obj.is_finite() && trial_obj < obj {
                u = trial;
                r = trial_r;
                obj = trial_obj;
                lambda = (lambda * 0.1).max(1e-15);
                accepted = true;
                if small_step || obj == 0.0 {
                    converged = true;
                }
                break;
            }
            if small_step {
                // No representable improvement left along any damped direction.
                converged = true;
                break;
            }
            lambda *= 10.0;
        }
        if !accepted && !converged {
            break;
        }
    }

    Some(FitResult {
        params: problem.natural(&u),
        objective: obj,
        converged,
        iterations,
        ci_low: None,
        ci_high: None,
        ci_level: None,
        n_data: rows.len(),
        start_index,
    })
}

fn fit_rows<R: Sync>(problem: &FitProblem<'_, R>, rows: &[&R], options: &FitOptions) -> Result<FitResult> {
    problem.validate()?;
    if rows.is_empty() || rows.len() < problem.param_count {
        return Err(FitError::DegenerateProblem {
            rows: rows.len(),
            params: problem.param_count,
        });
    }
    let results: Vec<Option<FitResult>> = problem
        .starts
        .par_iter()
        .enumerate()
        .map(|(i, s)| lm_from_start(problem, rows, s, i, options))
        .collect();
    let best = results
        .into_iter()
        .flatten()
        .min_by(|a, b| a.objective.total_cmp(&b.objective).then(a.start_index.cmp(&b.start_index)));
    match best {
        Some(b) => Ok(b),
        None => {
            // Every start hit a non-finite residual; blame the first row that is
            // non-finite at the first start.
            let r = residuals_at(problem, &problem.starts[0], rows);
            let row = r.iter().position(|x| !x.is_finite()).unwrap_or(0);
            Err(FitError::NonFiniteResidual(row))
        }
    }
}

/// Fit `problem` to `data`, returning the best result over all starts.
pub fn fit<R: Sync>(problem: &FitProblem<'_, R>, data: &[R], options: &FitOptions) -> Result<FitResult> {
    let rows: Vec<&R> = data.iter().collect();
    // A row that is non-finite at every start is a data problem, not a bad start.
    problem.validate()?;
    if let Some(row) = (0..rows.len()).find(|&i| {
        problem
            .starts
            .iter()
            .all(|s| !(problem.residual)(s, rows[i]).is_finite())
    }) {
        return Err(FitError::NonFiniteResidual(row));
    }
    fit_rows(problem, &rows, options)
}

/// Linear-interpolated sample quantile (`q` in `[0, 1]`) of sorted values.
fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Parameter vectors refitted on `resamples` row-resampled copies of `data`.
///
/// Each resample refits from `point` (natural scale). Resample `b` draws its
/// rows from ChaCha8 stream `b` seeded with `seed`, so the output does not
/// depend on thread scheduling. Resamples whose refit fails are dropped.
pub fn bootstrap_draws<R: Sync>(
    problem: &FitProblem<'_, R>,
    data: &[R],
    point: &[f64],
    resamples: usize,
    seed: u64,
    options: &FitOptions,
) -> Vec<Vec<f64>> {
    let n = data.len();
    if n == 0 {
        return Vec::new();
    }
    (0..resamples)
        .into_par_iter()
        .filter_map(|b| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(b as u64);
            let rows: Vec<&R> = (0..n).map(|_| &data[rng.random_range(0..n)]).collect();
            lm_from_start(problem, &rows, point, 0, options).map(|f| f.params)
        })
        .collect()
}

/// Per-parameter percentile interval of bootstrap draws at `level`, widened
/// where needed so that it contains `point`.
pub fn percentile_intervals(draws: &[Vec<f64>], point: &[f64], level: f64) -> (Vec<f64>, Vec<f64>) {
    let (mut lo, mut hi) = (Vec::with_capacity(point.len()), Vec::with_capacity(point.len()));
    for (j, &p) in point.iter().enumerate() {
        let mut col: Vec<f64> = draws.iter().map(|d| d[j]).collect();
        col.sort_by(f64::total_cmp);
        lo.push(quantile_sorted(&col, (1.0 - level) / 2.0).min(p));
        hi.push(quantile_sorted(&col, (1.0 + level) / 2.0).max(p));
    }
    (lo, hi)
}

pub(crate) fn check_bootstrap_args(fit_result: &FitResult, resamples: usize, level: f64) -> Result<()> {
    if !fit_result.converged {
        return Err(FitError::NotConverged);
    }
    if resamples < MIN_BOOTSTRAP_RESAMPLES {
        return Err(FitError::TooFewResamples {
            need: MIN_BOOTSTRAP_RESAMPLES,
            got: resamples,
        });
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(FitError::InvalidProblem(format!("confidence level must be in (0, 1), got {level}")));
    }
    Ok(())
}

/// Percentile bootstrap confidence intervals for a converged fit.
pub fn bootstrap_ci<R: Sync>(
    problem: &FitProblem<'_, R>,
    data: &[R],
    fit_result: &FitResult,
    resamples: usize,
    level: f64,
    seed: u64,
    options: &FitOptions,
) -> Result<FitResult> {
    check_bootstrap_args(fit_result, resamples, level)?;
    problem.validate()?;
    let draws = bootstrap_draws(problem, data, &fit_result.params, resamples, seed, options);
    if draws.is_empty() {
        return Err(FitError::NotConverged);
    }
    let (lo, hi) = percentile_intervals(&draws, &fit_result.params, level);
    let mut out = fit_result.clone();
    out.ci_low = Some(lo);
    out.ci_high = Some(hi);
    out.ci_level = Some(level);
    Ok(out)
}

/// `y = λ · x^(−α)` fitted by ordinary least squares in log-log space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerLawFit {
    pub lambda: f64,
    pub alpha_exp: f64,
    /// Residual standard error of the log-log regression (natural log).
    pub stderr: f64,
    /// Range of the abscissa (a loss, for hyperparameter laws) the fit saw.
    pub loss_range: (f64, f64),
    pub n_points: usize,
}

impl PowerLawFit {
    pub fn predict(&self, x: f64) -> f64 {
        self.lambda * x.powf(-self.alpha_exp)
    }
}

pub fn fit_power_law(points: &[(f64, f64)]) -> Result<PowerLawFit> {
    if points.len() < 3 {
        return Err(FitError::TooFewPoints(points.len()));
    }
    if let Some((index, &(x, y))) = points
        .iter()
        .enumerate()
        .find(|(_, (x, y))| !(x.is_finite() && y.is_finite() && *x > 0.0 && *y > 0.0))
    {
        return Err(FitError::NonPositiveCoordinate { index, x, y });
    }
    let n = points.len() as f64;
    let lx: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ly: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    if sxx <= f64::EPSILON * n * mx.abs().max(1.0) {
        return Err(FitError::DegenerateAbscissa);
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ssr: f64 = lx.iter().zip(&ly).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
    let (xmin, xmax) = points
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p.0), hi.max(p.0)));
    Ok(PowerLawFit {
        lambda: intercept.exp(),
        alpha_exp: -slope,
        stderr: (ssr / (n - 2.0)).sqrt(),
        loss_range: (xmin, xmax),
        n_points: points.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn linear_problem<'a>() -> FitProblem<'a, (f64, f64)> {
        FitProblem::new(1, |p: &[f64], row: &(f64, f64)| p[0] * row.0 - row.1).with_starts(vec![vec![0.5], vec![-3.0]])
    }

    #[test]
    fn exact_linear_fit() {
        let data = [(1.0, 2.0), (2.0, 4.0), (3.0, 6.0)];
        let res = fit(&linear_problem(), &data, &FitOptions::default()).unwrap();
        assert!((res.params[0] - 2.0).abs() < 1e-10);
        assert!(res.converged);
        assert_eq!(res.n_data, 3);
    }

    fn inverse_power_problem<'a>() -> FitProblem<'a, (f64, f64)> {
        // y = a / x^b, residual in log space
        FitProblem::new(2, |p: &[f64], row: &(f64, f64)| (p[0] / row.0.powf(p[1])).ln() - row.1.ln())
            .with_transforms(vec![ParamTransform::LogPositive, ParamTransform::Identity])
            .with_starts(vec![vec![1.0, 0.1], vec![20.0, 1.0]])
    }

    #[test]
    fn recovers_inverse_power() {
        let data: Vec<(f64, f64)> = (1..=20).map(|i| {
            let x = i as f64 * 0.7;
            (x, 5.0 / x.powf(0.5))
        }).collect();
        let res = fit(&inverse_power_problem(), &data, &FitOptions::default()).unwrap();
        assert!(((res.params[0] - 5.0) / 5.0).abs() < 1e-6, "{:?}", res.params);
        assert!(((res.params[1] - 0.5) / 0.5).abs() < 1e-6);
        assert!(res.converged);
    }

    #[test]
    fn nan_row_is_reported() {
        let data = [(1.0, 2.0), (2.0, f64::NAN), (3.0, 6.0)];
        assert_eq!(
            fit(&linear_problem(), &data, &FitOptions::default()).unwrap_err(),
            FitError::NonFiniteResidual(1)
        );
    }

    #[test]
    fn too_few_rows() {
        let data = [(1.0, 2.0)];
        let err = fit(&inverse_power_problem(), &data, &FitOptions::default()).unwrap_err();
        assert!(matches!(err, FitError::DegenerateProblem { rows: 1, params: 2 }));
    }

    #[test]
    fn bad_start_rejected() {
        let p = inverse_power_problem().with_starts(vec![vec![-1.0, 0.5]]);
        let err = fit(&p, &[(1.0, 1.0), (2.0, 1.0)], &FitOptions::default()).unwrap_err();
        assert!(matches!(err, FitError::InvalidProblem(_)));
    }

    #[test]
    fn analytic_jacobian_matches_finite_differences() {
        let p = inverse_power_problem().with_jacobian(|p: &[f64], row: &(f64, f64), out: &mut [f64]| {
            out[0] = 1.0 / p[0];
            out[1] = -row.0.ln();
        });
        let data: Vec<(f64, f64)> = (1..10).map(|i| (i as f64, 1.0)).collect();
        let params = [3.3, 0.7];
        let num = numerical_jacobian(&p, &params, &data);
        let jac = p.jacobian.as_ref().unwrap();
        let mut buf = [0.0; 2];
        for (row, nrow) in data.iter().zip(&num) {
            jac(&params, row, &mut buf);
            for j in 0..2 {
                assert!((buf[j] - nrow[j]).abs() <= 1e-5 * buf[j].abs().max(1e-8));
            }
        }
    }

    #[test]
    fn huber_matches_least_squares_inside_delta() {
        let r = [1e-4, -5e-4, 9e-4];
        let ols: f64 = r.iter().map(|x| 0.5 * x * x).sum();
        assert_eq!(huber_objective(&r, 1e-3), ols);
        assert!(huber(0.01, 1e-3) < 0.5 * 0.01 * 0.01);
    }

    #[test]
    fn bootstrap_rules() {
        let data: Vec<(f64, f64)> = (1..=20).map(|i| (i as f64, 5.0 / (i as f64).powf(0.5))).collect();
        let p = inverse_power_problem();
        let opts = FitOptions::default();
        let res = fit(&p, &data, &opts).unwrap();
        let a = bootstrap_ci(&p, &data, &res, 100, 0.95, 7, &opts).unwrap();
        let b = bootstrap_ci(&p, &data, &res, 100, 0.95, 7, &opts).unwrap();
        assert_eq!(a, b);
        let (lo, hi) = (a.ci_low.unwrap(), a.ci_high.unwrap());
        for j in 0..2 {
            assert!(hi[j] - lo[j] < 1e-6, "width {}", hi[j] - lo[j]);
            assert!(lo[j] <= res.params[j] && res.params[j] <= hi[j]);
        }
        assert!(matches!(
            bootstrap_ci(&p, &data, &res, 10, 0.95, 7, &opts),
            Err(FitError::TooFewResamples { .. })
        ));
        let mut unconverged = res.clone();
        unconverged.converged = false;
        assert_eq!(bootstrap_ci(&p, &data, &unconverged, 100, 0.95, 7, &opts), Err(FitError::NotConverged));
    }

    #[test]
    fn power_law_exact_and_flat() {
        let pts: Vec<(f64, f64)> = [1.0, 2.0, 4.0, 8.0].iter().map(|&x| (x, 10.0 / (x * x))).collect();
        let f = fit_power_law(&pts).unwrap();
        assert!((f.lambda - 10.0).abs() < 1e-9);
        assert!((f.alpha_exp - 2.0).abs() < 1e-9);
        assert_eq!(f.loss_range, (1.0, 8.0));

        let flat = [(1.0, 3.0), (2.0, 3.0), (5.0, 3.0)];
        let f = fit_power_law(&flat).unwrap();
        assert!(f.alpha_exp.abs() < 1e-12);
        assert!((f.lambda - 3.0).abs() < 1e-12);

        assert_eq!(fit_power_law(&[(1.0, 1.0), (2.0, 2.0)]), Err(FitError::TooFewPoints(2)));
        assert!(matches!(
            fit_power_law(&[(1.0, 1.0), (2.0, -2.0), (3.0, 1.0)]),
            Err(FitError::NonPositiveCoordinate { index: 1, .. })
        ));
        assert_eq!(fit_power_law(&[(2.0, 1.0), (2.0, 2.0), (2.0, 3.0)]), Err(FitError::DegenerateAbscissa));
    }

    proptest! {
        #[test]
        fn multistart_never_worse_than_any_start(
            a0 in 0.1f64..50.0, b0 in -1.0f64..2.0, a1 in 0.1f64..50.0, b1 in -1.0f64..2.0,
            noise in proptest::collection::vec(-0.05f64..0.05, 12),
        ) {
            let data: Vec<(f64, f64)> = noise.iter().enumerate()
                .map(|(i, e)| { let x = 1.0 + i as f64; (x, 4.0 * x.powf(-0.8) * e.exp()) })
                .collect();
            let p = inverse_power_problem().with_huber_delta(0.02).with_starts(vec![vec![a0, b0], vec![a1, b1]]);
            let res = fit(&p, &data, &FitOptions::default()).unwrap();
            for s in &p.starts {
                let r: Vec<f64> = data.iter().map(|row| (p.residual)(s, row)).collect();
                prop_assert!(res.objective <= huber_objective(&r, p.huber_delta));
            }
        }

        #[test]
        fn power_law_scale_equivariance(
            lambda in 0.01f64..100.0, alpha in -2.0f64..3.0, c in 0.01f64..100.0,
            noise in proptest::collection::vec(-0.1f64..0.1, 6),
        ) {
            let pts: Vec<(f64, f64)> = noise.iter().enumerate()
                .map(|(i, e)| { let x = 1.0 + i as f64 * 0.9; (x, lambda * x.powf(-alpha) * e.exp()) })
                .collect();
            let scaled: Vec<(f64, f64)> = pts.iter().map(|&(x, y)| (c * x, y)).collect();
            let f = fit_power_law(&pts).unwrap();
            let g = fit_power_law(&scaled).unwrap();
            prop_assert!((f.alpha_exp - g.alpha_exp).abs() < 1e-9);
            prop_assert!(((g.lambda - f.lambda * c.powf(f.alpha_exp)) / g.lambda).abs() < 1e-9);
        }
    }
}

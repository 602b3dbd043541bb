//! Synthetic sweeps with known ground truth.
//!
//! Every draw comes from `ChaCha8Rng::seed_from_u64(seed)` with the stream set
//! to the index of the record (or heatmap cell, or simulated batch size), so
//! output is reproducible and independent of generation order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::digest::sha256_hex;
use crate::hparam_scaling::{BatchNormSample, Heatmap, HeatmapPoint, Knob};
use crate::loss_laws::LawCoefficients;
use crate::run_data::{RunFormat, RunSet, TrainingRecord};

/// Identifier of the pseudorandom generator and how it is keyed.
pub const RNG_ALGORITHM: &str = "chacha8; seed_from_u64(seed); stream = item index";

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid spec field `{field}`: {reason}")]
    InvalidSpec { field: &'static str, reason: String },
}

pub type Result<T> = std::result::Result<T, SynthError>;

fn invalid(field: &'static str, reason: impl Into<String>) -> SynthError {
    SynthError::InvalidSpec {
        field,
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseModel {
    #[default]
    None,
    /// Loss multiplied by `exp(sigma_log · z)`, `z ~ N(0, 1)`.
    Lognormal { sigma_log: f64 },
}

impl NoiseModel {
    fn sigma(&self) -> f64 {
        match self {
            NoiseModel::None => 0.0,
            NoiseModel::Lognormal { sigma_log } => *sigma_log,
        }
    }
}

/// `knob_opt = lambda / L^alpha`, with loss rising as
/// `curvature · (ln knob − ln knob_opt)²` away from the optimum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedKnobLaw {
    pub lambda: f64,
    pub alpha: f64,
    pub knob_grid: Vec<f64>,
    #[serde(default = "default_curvature")]
    pub curvature: f64,
}

fn default_curvature() -> f64 {
    0.05
}

impl PlantedKnobLaw {
    pub fn knob_opt(&self, loss: f64) -> f64 {
        self.lambda / loss.powf(self.alpha)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    #[serde(flatten)]
    pub law: LawCoefficients,
    /// Model scales N, one run per (scale, expert count).
    pub scales: Vec<f64>,
    /// Token counts recorded for every run, strictly increasing.
    pub token_grid: Vec<f64>,
    #[serde(default = "dense_only")]
    pub experts: Vec<u32>,
    #[serde(default)]
    pub noise: NoiseModel,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch_law: Option<PlantedKnobLaw>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lr_law: Option<PlantedKnobLaw>,
    #[serde(default)]
    pub seed: u64,
}

fn dense_only() -> Vec<u32> {
    vec![1]
}

fn check_grid(field: &'static str, grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(invalid(field, "must not be empty"));
    }
    if let Some(v) = grid.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
        return Err(invalid(field, format!("values must be positive (got {v})")));
    }
    Ok(())
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        check_grid("scales", &self.scales)?;
        check_grid("token_grid", &self.token_grid)?;
        if self.token_grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(invalid("token_grid", "must be strictly increasing"));
        }
        if self.experts.is_empty() || self.experts.contains(&0) {
            return Err(invalid("experts", "must be a non-empty list of counts ≥ 1"));
        }
        let s = self.noise.sigma();
        if !(s.is_finite() && s >= 0.0) {
            return Err(invalid("noise", format!("sigma_log must be non-negative (got {s})")));
        }
        for (field, law) in [("batch_law", &self.batch_law), ("lr_law", &self.lr_law)] {
            if let Some(l) = law {
                check_grid(field, &l.knob_grid)?;
                if !(l.lambda > 0.0 && l.lambda.is_finite() && l.alpha.is_finite() && l.curvature >= 0.0) {
                    return Err(invalid(field, "lambda must be positive, alpha finite, curvature non-negative"));
                }
            }
        }
        // every grid point must be predictable
        for &n in &self.scales {
            for &e in &self.experts {
                self.law
                    .predict(n, self.token_grid[0], e)
                    .map_err(|err| invalid("law", err.to_string()))?;
            }
        }
        Ok(())
    }
}

fn rng_for(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

fn noise_factor(sigma: f64, seed: u64, index: u64) -> f64 {
    if sigma == 0.0 {
        return 1.0;
    }
    let z: f64 = StandardNormal.sample(&mut rng_for(seed, index));
    (sigma * z).exp()
}

fn finish(records: Vec<TrainingRecord>) -> RunSet {
    let provisional = RunSet::from_records(records, String::new()).expect("generated series are well formed");
    let mut bytes = Vec::new();
    provisional
        .write(&mut bytes, RunFormat::Csv)
        .expect("writing to memory cannot fail");
    let mut set = provisional;
    set.provenance.digest = sha256_hex(&bytes);
    set
}

fn base_record(run_id: &str, step: u64, tokens: f64, loss: f64, scale: f64, experts: u32) -> TrainingRecord {
    let mut r = TrainingRecord::new(run_id, step, tokens, loss);
    r.model_scale = Some(scale);
    r.params = Some(scale / 6.0);
    r.flops = Some(scale * tokens);
    r.experts = Some(experts);
    r
}

/// One run per (scale, expert count), observed at every token level.
pub fn generate_runs(spec: &SynthSpec) -> Result<RunSet> {
    spec.validate()?;
    let sigma = spec.noise.sigma();
    let mut records = Vec::with_capacity(spec.scales.len() * spec.experts.len() * spec.token_grid.len());
    for (i, &n) in spec.scales.iter().enumerate() {
        for &e in &spec.experts {
            let run_id = format!("synth-n{i}-e{e}");
            for (j, &d) in spec.token_grid.iter().enumerate() {
                let clean = spec.law.predict(n, d, e).map_err(|err| invalid("law", err.to_string()))?;
                let loss = clean * noise_factor(sigma, spec.seed, records.len() as u64);
                records.push(base_record(&run_id, j as u64 + 1, d, loss, n, e));
            }
        }
    }
    Ok(finish(records))
}

fn planted(spec: &SynthSpec, knob: Knob) -> Result<&PlantedKnobLaw> {
    match knob {
        Knob::BatchSize => spec.batch_law.as_ref().ok_or_else(|| invalid("batch_law", "required for a batch-size sweep")),
        Knob::LearningRate => spec.lr_law.as_ref().ok_or_else(|| invalid("lr_law", "required for a learning-rate sweep")),
    }
}

/// Keeps the batch-size and learning-rate sweeps on different streams.
fn knob_seed(seed: u64, knob: Knob) -> u64 {
    match knob {
        Knob::BatchSize => seed,
        Knob::LearningRate => seed ^ 0x9e37_79b9_7f4a_7c15,
    }
}

fn swept_loss(law: &PlantedKnobLaw, base: f64, knob_value: f64) -> f64 {
    base + law.curvature * (knob_value.ln() - law.knob_opt(base).ln()).powi(2)
}

/// Loss over (token level, knob value) for the first scale and expert count.
/// The clean loss at each level is the law's prediction plus a parabola in
/// ln(knob) centred on the planted optimum for that loss.
pub fn generate_heatmap(spec: &SynthSpec, knob: Knob) -> Result<Heatmap> {
    spec.validate()?;
    let law = planted(spec, knob)?;
    let (n, e) = (spec.scales[0], spec.experts[0]);
    let sigma = spec.noise.sigma();
    let seed = knob_seed(spec.seed, knob);
    let mut points = Vec::with_capacity(spec.token_grid.len() * law.knob_grid.len());
    for &d in &spec.token_grid {
        let base = spec.law.predict(n, d, e).map_err(|err| invalid("law", err.to_string()))?;
        for &k in &law.knob_grid {
            let loss = swept_loss(law, base, k) * noise_factor(sigma, seed, points.len() as u64);
            points.push(HeatmapPoint {
                token_level: d,
                knob_value: k,
                loss,
            });
        }
    }
    Ok(Heatmap { points })
}

/// The same sweep as [`generate_heatmap`], laid out as one run per knob value.
/// Batch sizes are rounded to whole examples.
pub fn generate_sweep_runs(spec: &SynthSpec, knob: Knob) -> Result<RunSet> {
    spec.validate()?;
    let law = planted(spec, knob)?;
    let (n, e) = (spec.scales[0], spec.experts[0]);
    let sigma = spec.noise.sigma();
    let seed = knob_seed(spec.seed, knob);
    let mut records = Vec::with_capacity(spec.token_grid.len() * law.knob_grid.len());
    for (i, &k) in law.knob_grid.iter().enumerate() {
        let run_id = format!("sweep-{knob}-{i}");
        let k = match knob {
            Knob::BatchSize => k.round().max(1.0),
            Knob::LearningRate => k,
        };
        for (j, &d) in spec.token_grid.iter().enumerate() {
            let base = spec.law.predict(n, d, e).map_err(|err| invalid("law", err.to_string()))?;
            let loss = swept_loss(law, base, k) * noise_factor(sigma, seed, records.len() as u64);
            let mut r = base_record(&run_id, j as u64 + 1, d, loss, n, e);
            match knob {
                Knob::BatchSize => r.batch_size = Some(k as u64),
                Knob::LearningRate => r.learning_rate = Some(k),
            }
            records.push(r);
        }
    }
    Ok(finish(records))
}

/// Per-example gradients `G + ξ` in `dim` dimensions, with `|G|² = grad_norm_sq`
/// and `ξ ~ N(0, (trace_sigma / dim) I)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradientNoiseSim {
    pub dim: usize,
    pub grad_norm_sq: f64,
    pub trace_sigma: f64,
}

impl GradientNoiseSim {
    /// Mean of `|G_B|²` over `samples` independent batches at each size.
    ///
    /// The batch mean of `B` independent noise vectors is drawn directly as
    /// `N(0, (trace_sigma / (dim·B)) I)`, which has exactly the distribution
    /// of averaging `B` per-example draws.
    pub fn mean_sq_norms(&self, batch_sizes: &[u64], samples: usize, seed: u64) -> Result<Vec<BatchNormSample>> {
        if self.dim == 0 {
            return Err(invalid("dim", "must be positive"));
        }
        if !(self.grad_norm_sq >= 0.0 && self.trace_sigma >= 0.0) {
            return Err(invalid("trace_sigma", "norms must be non-negative"));
        }
        if samples == 0 {
            return Err(invalid("samples", "must be positive"));
        }
        let g_component = (self.grad_norm_sq / self.dim as f64).sqrt();
        batch_sizes
            .iter()
            .enumerate()
            .map(|(i, &b)| {
                if b == 0 {
                    return Err(invalid("batch_sizes", "must be ≥ 1"));
                }
                let sd = (self.trace_sigma / (self.dim as f64 * b as f64)).sqrt();
                let mut rng = rng_for(seed, i as u64);
                let mut total = 0.0;
                for _ in 0..samples {
                    let mut sq = 0.0;
                    for _ in 0..self.dim {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        let v = g_component + sd * z;
                        sq += v * v;
                    }
                    total += sq;
                }
                Ok(BatchNormSample {
                    batch_size: b as f64,
                    mean_sq_norm: total / samples as f64,
                    samples,
                })
            })
            .collect()
    }
}

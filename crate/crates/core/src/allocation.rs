//! Compute-optimal allocation of tokens and model scale.
//!
//! Under `C = N·D`, minimizing `A/(N^α E^γ) + B/D^β + σ` gives
//!
//! ```text
//! N_opt = k_N · C^(β/(α+β)),   k_N = (αA / (βB E^γ))^( 1/(α+β))
//! D_opt = k_D · C^(α/(α+β)),   k_D = (αA / (βB E^γ))^(−1/(α+β))
//! ```
//!
//! [`brute_force_allocate`] searches the same argmin on a log grid and is
//! kept independent of the closed form so the two can check each other.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::loss_laws::{
    check_experts, predict_moe, DenseLawCoefficients, LawCoefficients, LossLaw, LossLawError, MoeLawCoefficients,
};

#[derive(Debug, Error, PartialEq)]
pub enum AllocationError {
    #[error("invalid coefficients: {0}")]
    InvalidCoefficients(String),
    #[error("compute budget must be positive (got {0})")]
    NonPositiveBudget(f64),
    #[error("brute-force grid needs at least {need} points, got {got}")]
    GridTooCoarse { need: usize, got: usize },
    #[error("budget grid is empty")]
    EmptyBudgetGrid,
    #[error(transparent)]
    Law(#[from] LossLawError),
}

pub type Result<T> = std::result::Result<T, AllocationError>;

/// Smallest grid accepted by [`brute_force_allocate`].
pub const MIN_GRID_POINTS: usize = 100;

/// Where a policy came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicySource {
    pub law: LossLaw,
    pub experts: u32,
    pub coefficients: MoeLawCoefficients,
}

/// `D_opt = k_D · C^α_D`, `N_opt = k_N · C^α_N`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationPolicy {
    pub k_d: f64,
    pub k_n: f64,
    pub alpha_d: f64,
    pub alpha_n: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<PolicySource>,
}

impl AllocationPolicy {
    /// A policy known only by its exponents (`k_D = k_N = 1`), e.g. a
    /// published row.
    pub fn from_exponents(alpha_d: f64, alpha_n: f64) -> Self {
        Self {
            k_d: 1.0,
            k_n: 1.0,
            alpha_d,
            alpha_n,
            source: None,
        }
    }
}

fn validate(c: &MoeLawCoefficients) -> Result<()> {
    let bad = |what: &str| Err(AllocationError::InvalidCoefficients(what.to_string()));
    if !(c.alpha.is_finite() && c.alpha > 0.0) {
        return bad("alpha must be positive");
    }
    if !(c.beta.is_finite() && c.beta > 0.0) {
        return bad("beta must be positive");
    }
    if !(c.a.is_finite() && c.a > 0.0 && c.b.is_finite() && c.b > 0.0) {
        return bad("A and B must be positive");
    }
    if !c.gamma.is_finite() || !c.sigma.is_finite() {
        return bad("gamma and sigma must be finite");
    }
    Ok(())
}

/// Closed-form policy for MoE (or dense, via `γ = 0`) coefficients at `experts`.
pub fn derive_policy(coeffs: &MoeLawCoefficients, experts: u32) -> Result<AllocationPolicy> {
    validate(coeffs)?;
    check_experts(experts)?;
    let (alpha, beta) = (coeffs.alpha, coeffs.beta);
    let ln_ratio = alpha.ln() + coeffs.a.ln() - beta.ln() - coeffs.b.ln() - coeffs.gamma * f64::from(experts).ln();
    let ln_k_n = ln_ratio / (alpha + beta);
    Ok(AllocationPolicy {
        k_d: (-ln_k_n).exp(),
        k_n: ln_k_n.exp(),
        alpha_d: alpha / (alpha + beta),
        alpha_n: beta / (alpha + beta),
        source: Some(PolicySource {
            law: if coeffs.gamma == 0.0 && experts == 1 { LossLaw::Dense } else { LossLaw::Moe },
            experts,
            coefficients: *coeffs,
        }),
    })
}

pub fn derive_policy_dense(coeffs: &DenseLawCoefficients) -> Result<AllocationPolicy> {
    let mut p = derive_policy(&MoeLawCoefficients::from(*coeffs), 1)?;
    if let Some(s) = p.source.as_mut() {
        s.law = LossLaw::Dense;
    }
    Ok(p)
}

/// Policy from any coefficient set; only the dense and MoE laws have one.
pub fn derive_policy_for(coeffs: &LawCoefficients, experts: u32) -> Result<AllocationPolicy> {
    match coeffs {
        LawCoefficients::Dense(d) => derive_policy_dense(d),
        LawCoefficients::Moe(m) => derive_policy(m, experts),
        other => Err(AllocationError::InvalidCoefficients(format!(
            "the {} law has no token/model-scale trade-off",
            other.law()
        ))),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimalPoint {
    pub tokens: f64,
    pub model_scale: f64,
}

pub fn optimal_point(policy: &AllocationPolicy, budget: f64) -> Result<OptimalPoint> {
    if !(budget.is_finite() && budget > 0.0) {
        return Err(AllocationError::NonPositiveBudget(budget));
    }
    let ln_c = budget.ln();
    Ok(OptimalPoint {
        tokens: (policy.k_d.ln() + policy.alpha_d * ln_c).exp(),
        model_scale: (policy.k_n.ln() + policy.alpha_n * ln_c).exp(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridOptimum {
    pub tokens: f64,
    pub model_scale: f64,
    pub loss: f64,
    /// Spacing of the grid in ln N.
    pub ln_step: f64,
}

/// Grid search for the loss-minimizing split of `budget`: `grid_points`
/// log-uniform values of N over `[C^0.1, C^0.9]`, each with `D = C / N`.
pub fn brute_force_allocate(
    coeffs: &MoeLawCoefficients,
    experts: u32,
    budget: f64,
    grid_points: usize,
) -> Result<GridOptimum> {
    if !(budget.is_finite() && budget > 0.0) {
        return Err(AllocationError::NonPositiveBudget(budget));
    }
    if grid_points < MIN_GRID_POINTS {
        return Err(AllocationError::GridTooCoarse {
            need: MIN_GRID_POINTS,
            got: grid_points,
        });
    }
    let ln_c = budget.ln();
    let (lo, hi) = (0.1 * ln_c, 0.9 * ln_c);
    let step = (hi - lo) / (grid_points - 1) as f64;
    let mut best: Option<GridOptimum> = None;
    for i in 0..grid_points {
        let n = (lo + step * i as f64).exp();
        let d = budget / n;
        let loss = predict_moe(coeffs, n, d, experts)?;
        if best.is_none_or(|b| loss < b.loss) {
            best = Some(GridOptimum {
                tokens: d,
                model_scale: n,
                loss,
                ln_step: step,
            });
        }
    }
    Ok(best.expect("grid is non-empty"))
}

/// One line of an allocation comparison table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub label: String,
    pub alpha_d: f64,
    pub alpha_n: f64,
    pub provenance: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum AlphaNVerdict {
    Larger { label: String },
    Tie { labels: Vec<String> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationComparison {
    /// Published reference rows, always present.
    pub reference_rows: Vec<ComparisonRow>,
    /// The policies being compared.
    pub rows: Vec<ComparisonRow>,
    /// Which compared policy allocates more of a growing budget to model scale.
    pub larger_alpha_n: Option<AlphaNVerdict>,
}

pub const TABLE1: &str = "Table 1";

/// Published `(label, α_D, α_N)` allocation exponents.
pub const REFERENCE_EXPONENTS: [(&str, f64, f64); 5] = [
    ("OpenAI (OpenWebText2)", 0.27, 0.73),
    ("Chinchilla (MassiveText)", 0.51, 0.49),
    ("DeepSeek (OpenWebText2)", 0.422, 0.578),
    ("Dense Model", 0.493, 0.507),
    ("MoE Model", 0.410, 0.590),
];

pub fn reference_rows() -> Vec<ComparisonRow> {
    REFERENCE_EXPONENTS
        .iter()
        .map(|&(label, alpha_d, alpha_n)| ComparisonRow {
            label: label.to_string(),
            alpha_d,
            alpha_n,
            provenance: TABLE1.to_string(),
        })
        .collect()
}

/// The published dense and MoE rows as exponent-only policies.
pub fn published_dense_moe_policies() -> Vec<(String, AllocationPolicy)> {
    REFERENCE_EXPONENTS[3..]
        .iter()
        .map(|&(label, d, n)| (label.to_string(), AllocationPolicy::from_exponents(d, n)))
        .collect()
}

/// Exponents closer than this count as tied.
const TIE_TOL: f64 = 1e-12;

pub fn compare_architectures(policies: &[(String, AllocationPolicy)]) -> AllocationComparison {
    let rows: Vec<ComparisonRow> = policies
        .iter()
        .map(|(label, p)| ComparisonRow {
            label: label.clone(),
            alpha_d: p.alpha_d,
            alpha_n: p.alpha_n,
            provenance: match &p.source {
                Some(s) => format!("derived from fitted {} coefficients (E = {})", s.law, s.experts),
                None => "supplied exponents".to_string(),
            },
        })
        .collect();
    let larger_alpha_n = rows
        .iter()
        .map(|r| r.alpha_n)
        .reduce(f64::max)
        .map(|max| {
            let top: Vec<String> = rows
                .iter()
                .filter(|r| (r.alpha_n - max).abs() <= TIE_TOL)
                .map(|r| r.label.clone())
                .collect();
            if top.len() == 1 {
                AlphaNVerdict::Larger { label: top[0].clone() }
            } else {
                AlphaNVerdict::Tie { labels: top }
            }
        });
    AllocationComparison {
        reference_rows: reference_rows(),
        rows,
        larger_alpha_n,
    }
}

impl AllocationComparison {
    /// Whether `label` is (or ties for) the largest α_N among compared rows.
    pub fn is_flagged(&self, label: &str) -> bool {
        match &self.larger_alpha_n {
            Some(AlphaNVerdict::Larger { label: l }) => l == label,
            Some(AlphaNVerdict::Tie { labels }) => labels.iter().any(|l| l == label),
            None => false,
        }
    }

    /// Reference rows followed by compared rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("label,alpha_D,alpha_N,provenance,largest_alpha_N\n");
        for r in &self.reference_rows {
            out.push_str(&format!("\"{}\",{},{},\"{}\",\n", r.label, r.alpha_d, r.alpha_n, r.provenance));
        }
        for r in &self.rows {
            out.push_str(&format!(
                "\"{}\",{},{},\"{}\",{}\n",
                r.label,
                r.alpha_d,
                r.alpha_n,
                r.provenance,
                self.is_flagged(&r.label)
            ));
        }
        out
    }
}

/// Data-efficiency comparison at one compute budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetEfficiency {
    pub budget: f64,
    pub dense_tokens: f64,
    pub dense_model_scale: f64,
    /// Dense loss at its compute-optimal point.
    pub target_loss: f64,
    pub moe_model_scale: f64,
    /// Tokens the MoE law needs at its compute-optimal N; `None` when it
    /// cannot reach the target loss at that N.
    pub moe_tokens: Option<f64>,
    /// `(D_dense − D_moe) / D_dense`, clamped to `[−1, 1]`.
    pub efficiency: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataEfficiency {
    pub per_budget: Vec<BudgetEfficiency>,
    /// Geometric mean of the budget grid.
    pub summary_budget: f64,
    /// Efficiency at `summary_budget`; `None` if the MoE law cannot reach
    /// the dense loss there.
    pub summary: Option<f64>,
    pub unreached_budgets: Vec<f64>,
    pub definition: String,
}

pub const DATA_EFFICIENCY_DEFINITION: &str = "artifact-defined: token savings (D_dense_opt - D_moe)/D_dense_opt at matched loss and matched compute budget, MoE evaluated at its own compute-optimal model scale; summary is the same ratio at the geometric-mean budget of the grid; budgets where the MoE law cannot reach the dense loss are reported and left out";

/// Token savings of the MoE law over the dense law at matched loss and budget.
pub fn data_efficiency(
    dense: &DenseLawCoefficients,
    moe: &MoeLawCoefficients,
    experts: u32,
    budgets: &[f64],
) -> Result<DataEfficiency> {
    if budgets.is_empty() {
        return Err(AllocationError::EmptyBudgetGrid);
    }
    let dense_policy = derive_policy_dense(dense)?;
    let moe_policy = derive_policy(moe, experts)?;
    let at = |c: f64| -> Result<BudgetEfficiency> {
        let d_opt = optimal_point(&dense_policy, c)?;
        let target = crate::loss_laws::predict_dense(dense, d_opt.model_scale, d_opt.tokens)?;
        let m_opt = optimal_point(&moe_policy, c)?;
        let scale_term = moe.a / (m_opt.model_scale.powf(moe.alpha) * f64::from(experts).powf(moe.gamma));
        let remaining = target - moe.sigma - scale_term;
        let moe_tokens = (remaining > 0.0).then(|| (moe.b / remaining).powf(1.0 / moe.beta));
        Ok(BudgetEfficiency {
            budget: c,
            dense_tokens: d_opt.tokens,
            dense_model_scale: d_opt.model_scale,
            target_loss: target,
            moe_model_scale: m_opt.model_scale,
            moe_tokens,
            efficiency: moe_tokens.map(|dm| ((d_opt.tokens - dm) / d_opt.tokens).clamp(-1.0, 1.0)),
        })
    };
    let per_budget = budgets.iter().map(|&c| at(c)).collect::<Result<Vec<_>>>()?;
    let geo_mean = (budgets.iter().map(|c| c.ln()).sum::<f64>() / budgets.len() as f64).exp();
    let summary = at(geo_mean)?;
    Ok(DataEfficiency {
        unreached_budgets: per_budget.iter().filter(|b| b.efficiency.is_none()).map(|b| b.budget).collect(),
        per_budget,
        summary_budget: geo_mean,
        summary: summary.efficiency,
        definition: DATA_EFFICIENCY_DEFINITION.to_string(),
    })
}

use std::path::Path;

use anyhow::anyhow;
use clap::Args;
use scalelaw_core::allocation::{
    brute_force_allocate, compare_architectures, data_efficiency, derive_policy_for, optimal_point,
    published_dense_moe_policies, AllocationComparison, AllocationError, AllocationPolicy, DataEfficiency, MIN_GRID_POINTS,
};
use scalelaw_core::digest::sha256_hex;
use scalelaw_core::loss_laws::{predict_moe, CoefficientsDocument, LawCoefficients, MoeLawCoefficients};
use serde::{Deserialize, Serialize};

use super::num;
use crate::error::{CliError, CliResult};
use crate::output::{emit, load_config, read_bytes, resolve_output, CsvSection, InputRef};
use crate::CommonArgs;

#[derive(Debug, Args)]
pub struct AllocateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Label for the matching --input; repeatable [default: file stem]
    #[arg(long)]
    pub label: Vec<String>,
    /// Expert count for MoE coefficients (required when any input is MoE).
    #[arg(long)]
    pub experts: Option<u32>,
    /// Compute budgets in FLOPs, comma-separated or repeated [default: 1e18..1e24, one per decade]
    #[arg(long, value_delimiter = ',')]
    pub budget: Vec<f64>,
    /// Check the closed form against a grid search at every budget.
    #[arg(long)]
    pub verify: bool,
    /// Grid size for --verify [default: 10000]
    #[arg(long)]
    pub grid_points: Option<usize>,
    /// Also compare the published dense and MoE allocation exponents.
    #[arg(long)]
    pub published: bool,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct AllocateConfig {
    labels: Option<Vec<String>>,
    experts: Option<u32>,
    budgets: Option<Vec<f64>>,
    verify: Option<bool>,
    grid_points: Option<usize>,
    published: Option<bool>,
}

/// Accepts a fit-loss report, a coefficients document or bare coefficients.
fn parse_coefficients(path: &Path, bytes: &[u8]) -> CliResult<LawCoefficients> {
    let bad = |e: serde_json::Error| CliError::input(anyhow!("{}: not a coefficients file: {e}", path.display()));
    let value: serde_json::Value = serde_json::from_slice(bytes).map_err(bad)?;
    let doc = match value.get("coefficients") {
        Some(inner) if inner.get("law").is_some() => inner.clone(),
        _ => value,
    };
    if let Ok(d) = serde_json::from_value::<CoefficientsDocument>(doc.clone()) {
        return Ok(d.coefficients);
    }
    serde_json::from_value::<LawCoefficients>(doc).map_err(bad)
}

#[derive(Debug, Serialize)]
struct LabeledPolicy {
    label: String,
    policy: AllocationPolicy,
}

#[derive(Debug, Serialize)]
struct VerifyRow {
    label: String,
    budget: f64,
    closed_form_model_scale: f64,
    closed_form_tokens: f64,
    closed_form_loss: f64,
    grid_model_scale: f64,
    grid_tokens: f64,
    grid_loss: f64,
    ln_grid_step: f64,
    /// The closed-form optimum lies inside the searched range of N.
    in_search_range: bool,
    within_one_cell: bool,
    loss_not_above_grid: bool,
}

#[derive(Debug, Serialize)]
struct Verification {
    operation: &'static str,
    grid_points: usize,
    agrees: bool,
    statement: String,
    rows: Vec<VerifyRow>,
}

#[derive(Debug, Serialize)]
struct AllocateBody {
    operation: &'static str,
    budgets: Vec<f64>,
    policies: Vec<LabeledPolicy>,
    comparison: AllocationComparison,
    #[serde(skip_serializing_if = "Option::is_none")]
    verification: Option<Verification>,
    #[serde(skip_serializing_if = "Option::is_none")]
    data_efficiency: Option<DataEfficiency>,
}

fn verify(
    policies: &[(String, AllocationPolicy)],
    budgets: &[f64],
    grid_points: usize,
) -> CliResult<Option<Verification>> {
    let mut rows = Vec::new();
    for (label, p) in policies {
        let Some(src) = &p.source else { continue };
        for &c in budgets {
            let o = optimal_point(p, c)?;
            let g = brute_force_allocate(&src.coefficients, src.experts, c, grid_points)?;
            let closed_loss = predict_moe(&src.coefficients, o.model_scale, o.tokens, src.experts)?;
            let in_range = o.model_scale >= c.powf(0.1) && o.model_scale <= c.powf(0.9);
            rows.push(VerifyRow {
                label: label.clone(),
                budget: c,
                closed_form_model_scale: o.model_scale,
                closed_form_tokens: o.tokens,
                closed_form_loss: closed_loss,
                grid_model_scale: g.model_scale,
                grid_tokens: g.tokens,
                grid_loss: g.loss,
                ln_grid_step: g.ln_step,
                in_search_range: in_range,
                within_one_cell: (o.model_scale.ln() - g.model_scale.ln()).abs() <= g.ln_step,
                loss_not_above_grid: closed_loss <= g.loss * (1.0 + 1e-6),
            });
        }
    }
    if rows.is_empty() {
        return Ok(None);
    }
    let checked: Vec<&VerifyRow> = rows.iter().filter(|r| r.in_search_range).collect();
    let agrees = checked.iter().all(|r| r.within_one_cell && r.loss_not_above_grid);
    let skipped = rows.len() - checked.len();
    let mut statement = if agrees {
        format!(
            "closed form agrees with grid search within one grid cell at all {} checked budgets",
            checked.len()
        )
    } else {
        "closed form and grid search DISAGREE; see rows".to_string()
    };
    if skipped > 0 {
        statement.push_str(&format!(
            "; {skipped} budget(s) skipped because the optimum lies outside N in [C^0.1, C^0.9]"
        ));
    }
    Ok(Some(Verification {
        operation: "brute_force_allocate",
        grid_points,
        agrees,
        statement,
        rows,
    }))
}

pub fn run(args: AllocateArgs) -> CliResult<()> {
    let cfg: AllocateConfig = load_config(args.common.config.as_deref())?;
    let labels = if args.label.is_empty() { cfg.labels.unwrap_or_default() } else { args.label };
    let experts = args.experts.or(cfg.experts);
    let budgets = if !args.budget.is_empty() {
        args.budget
    } else {
        cfg.budgets.unwrap_or_else(|| (18..=24).map(|k| 10f64.powi(k)).collect())
    };
    let grid_points = args.grid_points.or(cfg.grid_points).unwrap_or(10_000);
    let published = args.published || cfg.published.unwrap_or(false);
    if args.common.input.is_empty() && !published {
        return Err(CliError::input(anyhow!("give at least one --input or --published")));
    }
    if grid_points < MIN_GRID_POINTS {
        return Err(CliError::input(anyhow!("--grid-points must be at least {MIN_GRID_POINTS}")));
    }

    let mut inputs = Vec::new();
    let mut policies: Vec<(String, AllocationPolicy)> = Vec::new();
    let mut laws: Vec<LawCoefficients> = Vec::new();
    for (i, path) in args.common.input.iter().enumerate() {
        let bytes = read_bytes(path)?;
        inputs.push(InputRef {
            role: "coefficients".into(),
            sha256: sha256_hex(&bytes),
        });
        let coeffs = parse_coefficients(path, &bytes)?;
        let e = match coeffs {
            LawCoefficients::Moe(_) => experts
                .ok_or_else(|| CliError::input(anyhow!("--experts is required for MoE coefficients")))?,
            _ => 1,
        };
        let label = labels.get(i).cloned().unwrap_or_else(|| {
            path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| format!("input{i}"))
        });
        policies.push((label, derive_policy_for(&coeffs, e)?));
        laws.push(coeffs);
    }
    if let Some(c) = budgets.iter().find(|c| !(c.is_finite() && **c > 0.0)) {
        return Err(AllocationError::NonPositiveBudget(*c).into());
    }

    let verification = if args.verify || cfg.verify.unwrap_or(false) {
        verify(&policies, &budgets, grid_points)?
    } else {
        None
    };

    let mut warnings = Vec::new();
    let dense: Vec<_> = laws.iter().filter_map(|l| if let LawCoefficients::Dense(d) = l { Some(*d) } else { None }).collect();
    let moe: Vec<MoeLawCoefficients> =
        laws.iter().filter_map(|l| if let LawCoefficients::Moe(m) = l { Some(*m) } else { None }).collect();
    let efficiency = match (dense.as_slice(), moe.as_slice()) {
        ([d], [m]) => {
            let e = experts.expect("checked for MoE inputs");
            let eff = data_efficiency(d, m, e, &budgets)?;
            if !eff.unreached_budgets.is_empty() {
                warnings.push(format!(
                    "MoE law cannot reach the dense loss at {} budget(s); excluded from data efficiency",
                    eff.unreached_budgets.len()
                ));
            }
            Some(eff)
        }
        _ => None,
    };

    if published {
        policies.extend(published_dense_moe_policies());
    }
    let comparison = compare_architectures(&policies);

    let mut optimal = CsvSection::new("optimal", &["label", "budget", "tokens", "model_scale", "alpha_D", "alpha_N"]);
    for (label, p) in policies.iter().filter(|(_, p)| p.source.is_some()) {
        for &c in &budgets {
            let o = optimal_point(p, c)?;
            optimal.row([label.clone(), num(c), num(o.tokens), num(o.model_scale), num(p.alpha_d), num(p.alpha_n)]);
        }
    }
    let mut table = CsvSection::new("comparison", &["label", "alpha_D", "alpha_N", "provenance", "largest_alpha_N"]);
    for (r, flag) in comparison
        .reference_rows
        .iter()
        .map(|r| (r, String::new()))
        .chain(comparison.rows.iter().map(|r| (r, comparison.is_flagged(&r.label).to_string())))
    {
        table.row([r.label.clone(), num(r.alpha_d), num(r.alpha_n), r.provenance.clone(), flag]);
    }
    let mut sections = vec![table, optimal];
    if let Some(v) = &verification {
        let mut csv = CsvSection::new(
            "verify",
            &["label", "budget", "closed_form_model_scale", "grid_model_scale", "closed_form_loss", "grid_loss", "within_one_cell"],
        );
        for r in &v.rows {
            csv.row([
                r.label.clone(),
                num(r.budget),
                num(r.closed_form_model_scale),
                num(r.grid_model_scale),
                num(r.closed_form_loss),
                num(r.grid_loss),
                r.within_one_cell.to_string(),
            ]);
        }
        sections.push(csv);
    }
    if let Some(eff) = &efficiency {
        let mut csv = CsvSection::new(
            "data_efficiency",
            &["budget", "dense_tokens", "target_loss", "moe_model_scale", "moe_tokens", "efficiency"],
        );
        for b in &eff.per_budget {
            csv.row([
                num(b.budget),
                num(b.dense_tokens),
                num(b.target_loss),
                num(b.moe_model_scale),
                super::opt_num(b.moe_tokens),
                super::opt_num(b.efficiency),
            ]);
        }
        sections.push(csv);
    }

    let out = resolve_output(&args.common, "allocate.json");
    emit(
        &out,
        "allocate",
        inputs,
        None,
        AllocateBody {
            operation: "derive_policy",
            budgets,
            policies: policies
                .into_iter()
                .map(|(label, policy)| LabeledPolicy { label, policy })
                .collect(),
            comparison,
            verification,
            data_efficiency: efficiency,
        },
        sections,
        warnings,
    )
}

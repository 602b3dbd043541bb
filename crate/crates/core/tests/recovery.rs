//! End-to-end recovery of planted parameters from synthetic sweeps.

use scalelaw_core::hparam_scaling::{
    extract_contour_minima, fit_bopt_law, fit_epsopt_law, heatmap_from_contours, Knob, MinimaFitOptions,
};
use scalelaw_core::loss_laws::{fit_loss_law, LawCoefficients, LossFitOptions, LossLaw, MoeLawCoefficients};
use scalelaw_core::run_data::group_iso_token;
use scalelaw_core::synthgen::{generate_heatmap, generate_runs, generate_sweep_runs, NoiseModel, PlantedKnobLaw, SynthSpec};

fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| lo * (hi / lo).powf(i as f64 / (n - 1) as f64)).collect()
}

fn truth() -> MoeLawCoefficients {
    MoeLawCoefficients { a: 400.0, b: 600.0, alpha: 0.3, beta: 0.3, gamma: 0.12, sigma: 1.6 }
}

fn sweep_spec(seed: u64) -> SynthSpec {
    SynthSpec {
        law: LawCoefficients::Moe(truth()),
        scales: vec![3e8],
        token_grid: log_grid(1e8, 1e11, 30),
        experts: vec![1],
        noise: NoiseModel::Lognormal { sigma_log: 0.02 },
        batch_law: Some(PlantedKnobLaw { lambda: 4000.0, alpha: 2.0, knob_grid: log_grid(8.0, 8192.0, 25), curvature: 0.1 }),
        lr_law: Some(PlantedKnobLaw { lambda: 0.02, alpha: 1.0, knob_grid: log_grid(1e-4, 1e-1, 25), curvature: 0.1 }),
        seed,
    }
}

#[test]
fn iso_token_pipeline_recovers_planted_batch_law() {
    let spec = sweep_spec(11);
    let runs = generate_sweep_runs(&spec, Knob::BatchSize).unwrap();
    let contours = group_iso_token(&runs, &spec.token_grid, 1e-9).unwrap();
    let heat = heatmap_from_contours(&contours, Knob::BatchSize).unwrap();
    let minima = extract_contour_minima(&heat, Knob::BatchSize).unwrap();
    let fit = fit_bopt_law(&minima, MinimaFitOptions::default()).unwrap();
    assert!((fit.alpha_exp / 2.0 - 1.0).abs() < 0.10, "{fit:?}");
    assert!((fit.lambda / 4000.0).ln().abs() < 0.5, "{fit:?}");
}

#[test]
fn heatmap_pipeline_recovers_planted_lr_law() {
    let spec = sweep_spec(12);
    let heat = generate_heatmap(&spec, Knob::LearningRate).unwrap();
    let minima = extract_contour_minima(&heat, Knob::LearningRate).unwrap();
    let fit = fit_epsopt_law(&minima, MinimaFitOptions::default()).unwrap();
    assert!((fit.alpha_exp - 1.0).abs() < 0.10, "{fit:?}");
}

#[test]
fn moe_law_recovered_from_noisy_sweep() {
    let spec = SynthSpec {
        scales: vec![1e8, 1e10],
        token_grid: log_grid(1e9, 1e11, 100),
        experts: vec![1, 8],
        noise: NoiseModel::Lognormal { sigma_log: 0.01 },
        batch_law: None,
        lr_law: None,
        ..sweep_spec(5)
    };
    let runs = generate_runs(&spec).unwrap();
    let fit = fit_loss_law(&runs, LossLaw::Moe, &LossFitOptions::default()).unwrap();
    let LawCoefficients::Moe(got) = fit.coefficients else { panic!("wrong law") };
    let t = truth();
    let rel = |a: f64, b: f64| (a / b - 1.0).abs();
    assert!(rel(got.alpha, t.alpha) < 0.05, "{got:?}");
    assert!(rel(got.beta, t.beta) < 0.05, "{got:?}");
    assert!(rel(got.gamma, t.gamma) < 0.05, "{got:?}");
    assert!(rel(got.sigma, t.sigma) < 0.10, "{got:?}");
}

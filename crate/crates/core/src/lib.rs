//! Scaling-law analysis for dense and mixture-of-experts language models.
//!
//! - [`run_data`]: load, validate, smooth and group training-run logs.
//! - [`fit_engine`]: robust multi-start Levenberg-Marquardt, bootstrap
//!   intervals, log-log power-law regression.
//! - [`loss_laws`]: the dense, MoE, separable and quadratic-interaction loss
//!   laws; prediction, fitting and extrapolation.
//! - [`allocation`]: compute-optimal token/model-scale allocation, its
//!   brute-force check, architecture comparison and data efficiency.
//! - [`hparam_scaling`]: gradient noise scale, batch-size and learning-rate
//!   relations, contour minima and their power-law fits.
//! - [`synthgen`]: seeded synthetic sweeps with known ground truth.

pub mod allocation;
pub mod digest;
pub mod fit_engine;
pub mod hparam_scaling;
pub mod loss_laws;
pub mod run_data;
pub mod synthgen;

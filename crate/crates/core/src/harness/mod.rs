//! Truth simulation, Monte Carlo runs and CSV export for the quadrotor
//! benchmark.
//!
//! Configuration files are TOML with one `section.key = value` per line;
//! see the README for the schema.

mod check;
mod config;
mod export;
mod montecarlo;
mod rng;
mod trial;

pub use check::{kalman_reference, linear_oracle_checks, CheckOutcome};
pub use config::{parse_estimators, BenchmarkConfig, EstimatorKind, ModelChoice};
pub use export::{
    diagnostics_csv, export_csv, export_trial, fmt_f64, per_trial_rmse_csv, summary_csv, trajectories_csv,
    DIAGNOSTICS_HEADER, SUMMARY_HEADER,
};
pub use montecarlo::{run_monte_carlo, summarize, MonteCarloResult, SummaryRow, SummaryTable};
pub use rng::{trial_seed, GaussianStream, SEED_STRIDE};
pub use trial::{run_trial, simulate_truth, DiagnosticsRow, EstimatorRun, TrialResult, Truth};

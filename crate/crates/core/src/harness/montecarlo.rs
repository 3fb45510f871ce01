use nalgebra::DVector;
use rayon::prelude::*;

use super::config::{BenchmarkConfig, EstimatorKind};
use super::trial::{run_trial, TrialResult};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    pub kind: EstimatorKind,
    /// Pooled post-horizon RMSE per state component.
    pub rmse: DVector<f64>,
    /// Mean post-horizon step time in milliseconds; `NaN` with timing off.
    pub mean_step_ms: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SummaryTable {
    pub rows: Vec<SummaryRow>,
    pub n_trials: usize,
    /// `(trial, reason)` for every failed trial; these are left out of the rows.
    pub failed: Vec<(usize, String)>,
}

impl SummaryTable {
    pub fn row(&self, kind: EstimatorKind) -> Option<&SummaryRow> {
        self.rows.iter().find(|r| r.kind == kind)
    }
}

#[derive(Clone, Debug)]
pub struct MonteCarloResult {
    pub summary: SummaryTable,
    /// All trials in index order, failed ones included.
    pub trials: Vec<TrialResult>,
}

/// Aggregates trial results in index order. Squared errors are pooled over
/// trials and steps; the first trial is left out of the timing mean when
/// there is more than one.
pub fn summarize(cfg: &BenchmarkConfig, trials: &[TrialResult]) -> SummaryTable {
    let horizon = cfg.mhe.horizon;
    let ok: Vec<&TrialResult> = trials.iter().filter(|t| !t.failed()).collect();
    let rows = cfg
        .estimators
        .iter()
        .map(|&kind| {
            let n = cfg.x0_true.len();
            let mut sq = DVector::zeros(n);
            let mut count = 0usize;
            let mut time_sum = 0.0;
            let mut time_count = 0usize;
            for t in &ok {
                let run = t.run(kind).expect("enabled estimator ran");
                let (s, c) = run.squared_errors(&t.truth, horizon);
                sq += s;
                count += c;
                if trials.len() == 1 || t.trial != trials[0].trial {
                    let tail = &run.step_seconds[horizon..];
                    time_sum += tail.iter().sum::<f64>();
                    time_count += tail.len();
                }
            }
            SummaryRow {
                kind,
                rmse: (sq / count as f64).map(f64::sqrt),
                mean_step_ms: if cfg.timing {
                    1e3 * time_sum / time_count as f64
                } else {
                    f64::NAN
                },
            }
        })
        .collect();
    SummaryTable {
        rows,
        n_trials: trials.len(),
        failed: trials
            .iter()
            .filter(|t| t.failed())
            .map(|t| (t.trial, t.failure_summary()))
            .collect(),
    }
}

/// Runs `cfg.trials` trials, on the rayon pool when `cfg.parallel` is set.
/// More than 10% failed trials is a run-level error.
pub fn run_monte_carlo(cfg: &BenchmarkConfig) -> Result<MonteCarloResult> {
    cfg.validate()?;
    let trials: Vec<TrialResult> = if cfg.parallel {
        (0..cfg.trials)
            .into_par_iter()
            .map(|i| run_trial(cfg, i))
            .collect::<Result<_>>()?
    } else {
        (0..cfg.trials).map(|i| run_trial(cfg, i)).collect::<Result<_>>()?
    };
    let summary = summarize(cfg, &trials);
    let failed = summary.failed.len();
    if failed * 10 > cfg.trials || failed == cfg.trials {
        let details = summary
            .failed
            .iter()
            .map(|(i, why)| format!("trial {i}: {why}"))
            .collect::<Vec<_>>()
            .join("\n");
        return Err(Error::RunFailed {
            failed,
            total: cfg.trials,
            details,
        });
    }
    Ok(MonteCarloResult { summary, trials })
}

//! CSV output. Floats are written with 17 significant digits, lines end in
//! `\n`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::config::BenchmarkConfig;
use super::montecarlo::{MonteCarloResult, SummaryTable};
use super::trial::TrialResult;
use crate::{Error, Result};

pub const SUMMARY_HEADER: &str = "estimator,rmse_z_m,rmse_zdot_mps,mean_step_ms";
pub const DIAGNOSTICS_HEADER: &str = "k,i_star,delta_final,p_min_eig,p_max_eig,alpha_hat";

/// 17 significant digits; `nan`, `inf`, `-inf` for non-finite values.
pub fn fmt_f64(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else if v.is_infinite() {
        if v > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{v:.16e}")
    }
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn summary_csv(table: &SummaryTable) -> String {
    let mut out = String::from(SUMMARY_HEADER);
    out.push('\n');
    for row in &table.rows {
        let cells: Vec<String> = row.rmse.iter().map(|&v| fmt_f64(v)).collect();
        let _ = writeln!(out, "{},{},{}", row.kind, cells.join(","), fmt_f64(row.mean_step_ms));
    }
    out
}

pub fn trajectories_csv(cfg: &BenchmarkConfig, trial: &TrialResult) -> String {
    let labels = ["z", "zdot"];
    let mut out = String::from("k,t_s,z_true,zdot_true,y,u");
    for run in &trial.runs {
        for l in labels {
            let _ = write!(out, ",{}_{l}", run.kind);
        }
    }
    out.push('\n');
    let ts = cfg.quadrotor.ts;
    for k in 0..trial.truth.measurements.len() {
        let x = &trial.truth.states[k];
        let _ = write!(
            out,
            "{k},{},{},{},{},{}",
            fmt_f64(k as f64 * ts),
            fmt_f64(x[0]),
            fmt_f64(x[1]),
            fmt_f64(trial.truth.measurements[k][0]),
            fmt_f64(trial.truth.inputs[k][0])
        );
        for run in &trial.runs {
            match run.estimates.get(k) {
                Some(e) => {
                    let _ = write!(out, ",{},{}", fmt_f64(e[0]), fmt_f64(e[1]));
                }
                None => out.push_str(",nan,nan"),
            }
        }
        out.push('\n');
    }
    out
}

pub fn diagnostics_csv(trial: &TrialResult) -> String {
    let mut out = String::from(DIAGNOSTICS_HEADER);
    out.push('\n');
    for d in &trial.diagnostics {
        let i_star = d.i_star.map_or_else(|| "nan".to_string(), |i| i.to_string());
        let _ = writeln!(
            out,
            "{},{i_star},{},{},{},{}",
            d.k,
            fmt_f64(d.delta_final),
            fmt_f64(d.p_min_eig),
            fmt_f64(d.p_max_eig),
            fmt_f64(d.alpha_hat)
        );
    }
    out
}

pub fn per_trial_rmse_csv(cfg: &BenchmarkConfig, trials: &[TrialResult]) -> String {
    let mut out = String::from("trial,estimator,failed,rmse_z_m,rmse_zdot_mps\n");
    for t in trials {
        for run in &t.runs {
            let (z, zd) = if run.failure.is_some() {
                (f64::NAN, f64::NAN)
            } else {
                let r = run.rmse(&t.truth, cfg.mhe.horizon);
                (r[0], r[1])
            };
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                t.trial,
                run.kind,
                u8::from(run.failure.is_some()),
                fmt_f64(z),
                fmt_f64(zd)
            );
        }
    }
    out
}

/// Writes `summary.csv`, `per_trial_rmse.csv` and, when enabled, the
/// per-trial trajectory and diagnostics files into `dir` (created if
/// missing).
pub fn export_csv(cfg: &BenchmarkConfig, result: &MonteCarloResult, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write(&dir.join("summary.csv"), &summary_csv(&result.summary))?;
    write(&dir.join("per_trial_rmse.csv"), &per_trial_rmse_csv(cfg, &result.trials))?;
    if cfg.per_trial_files {
        for t in &result.trials {
            export_trial(cfg, t, dir)?;
        }
    }
    Ok(())
}

/// Writes `trajectories_<trial>.csv` and `diagnostics_<trial>.csv`.
pub fn export_trial(cfg: &BenchmarkConfig, trial: &TrialResult, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write(
        &dir.join(format!("trajectories_{}.csv", trial.trial)),
        &trajectories_csv(cfg, trial),
    )?;
    write(
        &dir.join(format!("diagnostics_{}.csv", trial.trial)),
        &diagnostics_csv(trial),
    )
}

use std::fs;
use std::path::Path;

use scdmhe::harness::{
    export_csv, run_monte_carlo, BenchmarkConfig, EstimatorKind, ModelChoice, DIAGNOSTICS_HEADER, SUMMARY_HEADER,
};
use scdmhe::scdmhe::ArrivalAnchor;
use scdmhe::Error;

fn small(trials: usize) -> BenchmarkConfig {
    BenchmarkConfig {
        trials,
        steps: 60,
        parallel: false,
        timing: false,
        ..BenchmarkConfig::default()
    }
}

fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap().split(',').map(str::to_owned).collect();
    let rows = lines.map(|l| l.split(',').map(str::to_owned).collect()).collect();
    (header, rows)
}

fn col(header: &[String], name: &str) -> usize {
    header.iter().position(|h| h == name).unwrap_or_else(|| panic!("missing column {name}"))
}

#[test]
fn summary_rmse_is_reproducible_from_trajectory_files() {
    let cfg = small(4);
    let res = run_monte_carlo(&cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    export_csv(&cfg, &res, dir.path()).unwrap();

    let (sh, srows) = read_csv(&dir.path().join("summary.csv"));
    assert_eq!(sh.join(","), SUMMARY_HEADER);
    let (ph, prows) = read_csv(&dir.path().join("per_trial_rmse.csv"));

    for kind in EstimatorKind::ALL {
        let mut sum = [0.0f64; 2];
        let mut count = 0usize;
        let mut per_trial_sq = [0.0f64; 2];
        for t in 0..cfg.trials {
            let (h, rows) = read_csv(&dir.path().join(format!("trajectories_{t}.csv")));
            let (zt, zdt) = (col(&h, "z_true"), col(&h, "zdot_true"));
            let (ze, zde) = (col(&h, &format!("{kind}_z")), col(&h, &format!("{kind}_zdot")));
            let mut trial_sum = [0.0f64; 2];
            let mut trial_n = 0usize;
            for row in rows.iter().skip(cfg.mhe.horizon) {
                let f = |i: usize| row[i].parse::<f64>().unwrap();
                let e = [f(zt) - f(ze), f(zdt) - f(zde)];
                for c in 0..2 {
                    sum[c] += e[c] * e[c];
                    trial_sum[c] += e[c] * e[c];
                }
                count += 1;
                trial_n += 1;
            }
            let prow = prows
                .iter()
                .find(|r| r[col(&ph, "trial")] == t.to_string() && r[col(&ph, "estimator")] == kind.name())
                .unwrap();
            for (c, name) in ["rmse_z_m", "rmse_zdot_mps"].into_iter().enumerate() {
                let reported: f64 = prow[col(&ph, name)].parse().unwrap();
                let mine = (trial_sum[c] / trial_n as f64).sqrt();
                assert!((reported - mine).abs() <= 1e-12 * mine.max(1.0), "{kind} trial {t}");
                per_trial_sq[c] += reported * reported;
            }
        }
        let srow = srows.iter().find(|r| r[0] == kind.name()).unwrap();
        for c in 0..2 {
            let pooled = (sum[c] / count as f64).sqrt();
            let reported: f64 = srow[1 + c].parse().unwrap();
            assert!((reported - pooled).abs() <= 1e-12 * pooled.max(1.0), "{kind} component {c}");
            // Equal-length trials: pooled RMSE² equals the mean of per-trial RMSE².
            let from_trials = (per_trial_sq[c] / cfg.trials as f64).sqrt();
            assert!((reported - from_trials).abs() <= 1e-10 * pooled.max(1.0));
        }
        assert_eq!(srow[3], "nan", "timing disabled");
    }
}

#[test]
fn diagnostics_rows_start_at_first_full_window() {
    let cfg = small(1);
    let res = run_monte_carlo(&cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    export_csv(&cfg, &res, dir.path()).unwrap();
    let (h, rows) = read_csv(&dir.path().join("diagnostics_0.csv"));
    assert_eq!(h.join(","), DIAGNOSTICS_HEADER);
    assert_eq!(rows.len(), cfg.steps - (cfg.mhe.horizon - 1));
    assert_eq!(rows[0][0], (cfg.mhe.horizon - 1).to_string());
    for row in &rows[1..] {
        let i_star: usize = row[1].parse().unwrap();
        assert!((1..=cfg.mhe.max_iterations).contains(&i_star));
        let alpha: f64 = row[5].parse().unwrap();
        assert!(alpha > 0.0);
    }
}

#[test]
fn estimator_subset_limits_columns_and_blanks_mhe_diagnostics() {
    let cfg = BenchmarkConfig {
        estimators: vec![EstimatorKind::Ekf],
        ..small(2)
    };
    let res = run_monte_carlo(&cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    export_csv(&cfg, &res, dir.path()).unwrap();
    let (h, _) = read_csv(&dir.path().join("trajectories_1.csv"));
    assert_eq!(h.join(","), "k,t_s,z_true,zdot_true,y,u,ekf_z,ekf_zdot");
    let (_, rows) = read_csv(&dir.path().join("diagnostics_1.csv"));
    assert!(rows.iter().all(|r| r[1] == "nan" && r[2] == "nan"));
    assert!(rows.iter().all(|r| r[5] != "nan"));
}

#[test]
fn per_trial_files_can_be_disabled() {
    let cfg = BenchmarkConfig {
        per_trial_files: false,
        ..small(2)
    };
    let res = run_monte_carlo(&cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    export_csv(&cfg, &res, dir.path()).unwrap();
    let mut names: Vec<_> = fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert_eq!(names, ["per_trial_rmse.csv", "summary.csv"]);
}

#[test]
fn toml_config_overrides_defaults() {
    let cfg = BenchmarkConfig::from_toml_str(
        r#"
        [model]
        kind = "linear"
        ts = 0.1

        [run]
        steps = 50
        trials = 3
        seed = 7
        estimators = ["scdmhe", "ekf"]

        [mhe]
        horizon = 6
        anchor = "smoothed"

        [init]
        x0_hat = [2.0, 0.5]
        p0 = [[2.0, 0.0], [0.0, 3.0]]

        [noise]
        r = [[0.25]]

        [output]
        timing = false
        "#,
    )
    .unwrap();
    assert_eq!(cfg.model, ModelChoice::Linear);
    assert_eq!(cfg.quadrotor.ts, 0.1);
    assert_eq!((cfg.steps, cfg.trials, cfg.seed), (50, 3, 7));
    assert_eq!(cfg.estimators, [EstimatorKind::Ekf, EstimatorKind::Scdmhe], "canonical order");
    assert_eq!(cfg.mhe.horizon, 6);
    assert_eq!(cfg.mhe.anchor, ArrivalAnchor::Smoothed);
    assert_eq!(cfg.p0[(1, 1)], 3.0);
    assert_eq!(cfg.r[(0, 0)], 0.25);
    assert!(!cfg.timing);
    assert_eq!(cfg.mhe.max_iterations, BenchmarkConfig::default().mhe.max_iterations);
}

#[test]
fn invalid_configs_are_config_errors() {
    for text in [
        "[run]\nbogus = 1",
        "[mhe]\nhorizon = 1",
        "[run]\nestimators = [\"kalman\"]",
        "[noise]\nq = [[1.0, 0.0]]",
        "[init]\np0 = [[1.0, 0.0], [0.0, -1.0]]",
        "[run]\nsteps = 5",
        "[model]\nkind = \"plane\"",
        "not toml at all ===",
    ] {
        match BenchmarkConfig::from_toml_str(text) {
            Err(Error::Config(_)) => {}
            other => panic!("{text:?}: expected a config error, got {other:?}"),
        }
    }
}

#[test]
fn flat_dotted_keys_are_accepted() {
    let cfg = BenchmarkConfig::from_toml_str("run.trials = 5\nmhe.horizon = 8\nnoise.r = [[0.3]]\nmodel.h_max = 25.0\n").unwrap();
    assert_eq!(cfg.trials, 5);
    assert_eq!(cfg.mhe.horizon, 8);
    assert_eq!(cfg.r[(0, 0)], 0.3);
    assert_eq!(cfg.quadrotor.h_max, 25.0);
}

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::Deserialize;

use crate::baselines::{SqpOptions, UkfParams};
use crate::linalg::{eigen_extremes, is_positive_definite, symmetrize};
use crate::model::{ControlSignal, LinearModel, ModelKind, NoiseSpec, Quadrotor, QuadrotorParams, SystemModel};
use crate::scdmhe::{ArrivalAnchor, EstimatorConfig};
use crate::{Error, Result};

/// Estimators the harness can run, in summary-row order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EstimatorKind {
    Ekf,
    Ukf,
    Nmhe,
    Scdmhe,
}

impl EstimatorKind {
    pub const ALL: [EstimatorKind; 4] = [Self::Ekf, Self::Ukf, Self::Nmhe, Self::Scdmhe];

    pub fn name(self) -> &'static str {
        match self {
            Self::Ekf => "ekf",
            Self::Ukf => "ukf",
            Self::Nmhe => "nmhe",
            Self::Scdmhe => "scdmhe",
        }
    }
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EstimatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key: String = s
            .trim()
            .chars()
            .filter(|c| !matches!(c, '-' | '_'))
            .collect::<String>()
            .to_ascii_lowercase();
        match key.as_str() {
            "ekf" => Ok(Self::Ekf),
            "ukf" => Ok(Self::Ukf),
            "nmhe" => Ok(Self::Nmhe),
            "scdmhe" | "scd" => Ok(Self::Scdmhe),
            _ => Err(Error::Config(format!("unknown estimator `{s}`"))),
        }
    }
}

/// Parses a comma-separated estimator list; the result is sorted and
/// deduplicated. An empty string gives an empty set.
pub fn parse_estimators(list: &str) -> Result<Vec<EstimatorKind>> {
    let mut out = list
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(EstimatorKind::from_str)
        .collect::<Result<Vec<_>>>()?;
    out.sort();
    out.dedup();
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelChoice {
    Quadrotor,
    /// Drag-free, saturation-free linear oracle.
    Linear,
}

/// Full description of a benchmark run.
#[derive(Clone, Debug, PartialEq)]
pub struct BenchmarkConfig {
    pub model: ModelChoice,
    pub quadrotor: QuadrotorParams,
    /// Trial length `N`.
    pub steps: usize,
    pub trials: usize,
    pub seed: u64,
    pub estimators: Vec<EstimatorKind>,
    /// Run trials on the rayon pool.
    pub parallel: bool,
    pub mhe: EstimatorConfig,
    pub sqp: SqpOptions,
    pub ukf: UkfParams,
    pub x0_true: DVector<f64>,
    pub x0_hat: DVector<f64>,
    pub p0: DMatrix<f64>,
    /// Process covariance used by the simulator and the estimators.
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub input: ControlSignal,
    /// Record wall-clock step times; when off, timing columns hold `nan`.
    pub timing: bool,
    /// Write `trajectories_<trial>.csv` and `diagnostics_<trial>.csv`.
    pub per_trial_files: bool,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            model: ModelChoice::Quadrotor,
            quadrotor: QuadrotorParams::default(),
            steps: 120,
            trials: 100,
            seed: 2024,
            estimators: EstimatorKind::ALL.to_vec(),
            parallel: true,
            mhe: EstimatorConfig::default(),
            sqp: SqpOptions::default(),
            ukf: UkfParams::default(),
            x0_true: DVector::from_vec(vec![10.0, 0.0]),
            x0_hat: DVector::from_vec(vec![100.0, -20.0]),
            p0: DMatrix::identity(2, 2),
            q: DMatrix::from_diagonal(&DVector::from_vec(vec![1e-3, 5e-2])),
            r: DMatrix::from_element(1, 1, 0.5),
            input: ControlSignal::default(),
            timing: true,
            per_trial_files: true,
        }
    }
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
struct RawConfig {
    model: RawModel,
    run: RawRun,
    mhe: RawMhe,
    nmhe: RawNmhe,
    ukf: RawUkf,
    init: RawInit,
    noise: RawNoise,
    input: RawInput,
    output: RawOutput,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
struct RawModel {
    kind: Option<String>,
    ts: Option<f64>,
    mass: Option<f64>,
    g: Option<f64>,
    drag: Option<f64>,
    h_max: Option<f64>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
struct RawRun {
    steps: Option<usize>,
    trials: Option<usize>,
    seed: Option<u64>,
    estimators: Option<Vec<String>>,
    parallel: Option<bool>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
struct RawMhe {
    horizon: Option<usize>,
    max_iterations: Option<usize>,
    tolerance: Option<f64>,
    hessian_regularization: Option<f64>,
    anchor: Option<String>,
    kkt_tolerance: Option<f64>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
struct RawNmhe {
    max_iterations: Option<usize>,
    max_halvings: Option<usize>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
struct RawUkf {
    alpha: Option<f64>,
    beta: Option<f64>,
    kappa: Option<f64>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
struct RawInit {
    x0_true: Option<Vec<f64>>,
    x0_hat: Option<Vec<f64>>,
    p0: Option<Vec<Vec<f64>>>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
struct RawNoise {
    q: Option<Vec<Vec<f64>>>,
    r: Option<Vec<Vec<f64>>>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
struct RawInput {
    offset: Option<f64>,
    amplitude: Option<f64>,
    time_scale: Option<f64>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
struct RawOutput {
    timing: Option<bool>,
    per_trial_files: Option<bool>,
}

fn matrix(rows: Vec<Vec<f64>>, what: &str) -> Result<DMatrix<f64>> {
    let n = rows.len();
    let m = rows.first().map_or(0, Vec::len);
    if n == 0 || m == 0 || rows.iter().any(|r| r.len() != m) {
        return Err(Error::Config(format!("{what} must be a non-empty rectangular array of rows")));
    }
    Ok(DMatrix::from_row_iterator(n, m, rows.into_iter().flatten()))
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

impl BenchmarkConfig {
    /// Parses `section.key = value` text (TOML). Missing keys keep the
    /// benchmark defaults; unknown keys are rejected.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let mut cfg = Self::default();

        if let Some(kind) = raw.model.kind {
            cfg.model = match kind.to_ascii_lowercase().as_str() {
                "quadrotor" => ModelChoice::Quadrotor,
                "linear" => ModelChoice::Linear,
                other => return Err(Error::Config(format!("unknown model.kind `{other}`"))),
            };
        }
        let qp = &mut cfg.quadrotor;
        set(&mut qp.ts, raw.model.ts);
        set(&mut qp.mass, raw.model.mass);
        set(&mut qp.g, raw.model.g);
        set(&mut qp.drag, raw.model.drag);
        set(&mut qp.h_max, raw.model.h_max);

        set(&mut cfg.steps, raw.run.steps);
        set(&mut cfg.trials, raw.run.trials);
        set(&mut cfg.seed, raw.run.seed);
        set(&mut cfg.parallel, raw.run.parallel);
        if let Some(list) = raw.run.estimators {
            cfg.estimators = parse_estimators(&list.join(","))?;
        }

        set(&mut cfg.mhe.horizon, raw.mhe.horizon);
        set(&mut cfg.mhe.max_iterations, raw.mhe.max_iterations);
        set(&mut cfg.mhe.tolerance, raw.mhe.tolerance);
        set(&mut cfg.mhe.hessian_regularization, raw.mhe.hessian_regularization);
        set(&mut cfg.mhe.kkt.tolerance, raw.mhe.kkt_tolerance);
        if let Some(anchor) = raw.mhe.anchor {
            cfg.mhe.anchor = match anchor.to_ascii_lowercase().as_str() {
                "smoothed" => ArrivalAnchor::Smoothed,
                "marginalized" => ArrivalAnchor::Marginalized,
                other => return Err(Error::Config(format!("unknown mhe.anchor `{other}`"))),
            };
        }
        set(&mut cfg.sqp.max_iterations, raw.nmhe.max_iterations);
        set(&mut cfg.sqp.max_halvings, raw.nmhe.max_halvings);

        set(&mut cfg.ukf.alpha, raw.ukf.alpha);
        set(&mut cfg.ukf.beta, raw.ukf.beta);
        set(&mut cfg.ukf.kappa, raw.ukf.kappa);

        if let Some(v) = raw.init.x0_true {
            cfg.x0_true = DVector::from_vec(v);
        }
        if let Some(v) = raw.init.x0_hat {
            cfg.x0_hat = DVector::from_vec(v);
        }
        if let Some(rows) = raw.init.p0 {
            cfg.p0 = matrix(rows, "init.p0")?;
        }
        if let Some(rows) = raw.noise.q {
            cfg.q = matrix(rows, "noise.q")?;
        }
        if let Some(rows) = raw.noise.r {
            cfg.r = matrix(rows, "noise.r")?;
        }

        set(&mut cfg.input.offset, raw.input.offset);
        set(&mut cfg.input.amplitude, raw.input.amplitude);
        if raw.input.time_scale.is_some() {
            cfg.input.time_scale = raw.input.time_scale;
        }
        set(&mut cfg.timing, raw.output.timing);
        set(&mut cfg.per_trial_files, raw.output.per_trial_files);

        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    /// Checks shapes and ranges; every failure is a [`Error::Config`].
    pub fn validate(&self) -> Result<()> {
        let cfg_err = |msg: String| Err(Error::Config(msg));
        if let Err(e) = self.quadrotor.validate() {
            return cfg_err(e.to_string());
        }
        if let Err(e) = self.mhe.validate() {
            return cfg_err(e.to_string());
        }
        if self.steps <= self.mhe.horizon {
            return cfg_err(format!(
                "run.steps ({}) must exceed mhe.horizon ({})",
                self.steps, self.mhe.horizon
            ));
        }
        if self.trials < 1 {
            return cfg_err("run.trials must be at least 1".into());
        }
        if self.sqp.max_iterations < 1 {
            return cfg_err("nmhe.max_iterations must be at least 1".into());
        }
        let model = self.build_model();
        let n = model.state_dim();
        let p = model.output_dim();
        if let Err(e) = self.ukf.validate(n) {
            return cfg_err(e.to_string());
        }
        for (name, v) in [("init.x0_true", &self.x0_true), ("init.x0_hat", &self.x0_hat)] {
            if v.len() != n || v.iter().any(|x| !x.is_finite()) {
                return cfg_err(format!("{name} must hold {n} finite values"));
            }
        }
        if self.p0.shape() != (n, n) || !is_positive_definite(&symmetrize(&self.p0)) {
            return cfg_err(format!("init.p0 must be a {n}x{n} positive-definite matrix"));
        }
        for (name, m, dim) in [("noise.q", &self.q, n), ("noise.r", &self.r, p)] {
            if m.shape() != (dim, dim) || m.iter().any(|x| !x.is_finite()) {
                return cfg_err(format!("{name} must be a finite {dim}x{dim} matrix"));
            }
            if (m - m.transpose()).amax() > 1e-12 * m.amax().max(1.0) || eigen_extremes(m).0 < -1e-12 {
                return cfg_err(format!("{name} must be symmetric positive semidefinite"));
            }
        }
        Ok(())
    }

    pub fn build_model(&self) -> ModelKind {
        match self.model {
            ModelChoice::Quadrotor => ModelKind::Quadrotor(
                Quadrotor::new(self.quadrotor).unwrap_or_default(),
            ),
            ModelChoice::Linear => ModelKind::Linear(LinearModel::quadrotor_linearization(self.quadrotor.ts)),
        }
    }

    /// Covariances handed to the estimators; these must be positive definite.
    pub fn noise_spec(&self) -> Result<NoiseSpec> {
        NoiseSpec::constant(self.q.clone(), self.r.clone())
    }

    /// The linear-Gaussian oracle configuration used for equivalence checks.
    pub fn linear_oracle() -> Self {
        Self {
            model: ModelChoice::Linear,
            steps: 200,
            trials: 20,
            x0_true: DVector::from_vec(vec![1.0, 0.0]),
            x0_hat: DVector::from_vec(vec![3.0, -1.0]),
            ..Self::default()
        }
    }
}

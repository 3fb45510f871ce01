use nalgebra::DVector;

use crate::eqqp::{assemble_qp, EqualityQp, HorizonProblem, KktOptions, KktSolver};
use crate::model::{NoiseSpec, SystemModel};
use crate::scdmhe::{
    ArrivalCost, EstimatorConfig, InnerSolve, MovingHorizonEstimator, StageModel, WindowData,
    WindowEstimate, WindowSolver,
};
use crate::Result;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SqpOptions {
    pub max_iterations: usize,
    pub max_halvings: usize,
    /// Sufficient-decrease fraction in the Armijo test.
    pub armijo: f64,
}

impl Default for SqpOptions {
    fn default() -> Self {
        Self {
            max_iterations: 30,
            max_halvings: 20,
            armijo: 1e-4,
        }
    }
}

/// Sequential quadratic programming on the full nonlinear window problem,
/// with the model linearized through its Jacobians and an exact `ℓ1` merit
/// function for the backtracking line search.
#[derive(Debug)]
pub struct SqpIteration {
    options: SqpOptions,
    kkt: KktSolver,
}

impl SqpIteration {
    pub fn new(options: SqpOptions, kkt: KktOptions) -> Self {
        Self {
            options,
            kkt: KktSolver::new(kkt),
        }
    }

    fn linearize<M: SystemModel + ?Sized>(
        model: &M,
        data: &WindowData,
        states: &[DVector<f64>],
    ) -> Result<EqualityQp> {
        let horizon = data.horizon();
        let first = data.first_step;
        let mut a = Vec::with_capacity(horizon - 1);
        let mut drift = Vec::with_capacity(horizon - 1);
        let mut c = Vec::with_capacity(horizon);
        let mut y = Vec::with_capacity(horizon);
        for (j, x) in states.iter().enumerate() {
            let u = data
                .inputs
                .get(j)
                .cloned()
                .unwrap_or_else(|| DVector::zeros(model.input_dim()));
            let (fx, hx) = model.jacobians(x, &u, first + j)?;
            if j + 1 < horizon {
                drift.push(model.dynamics(x, &u, first + j)? - &fx * x);
                a.push(fx);
            }
            y.push(&data.measurements[j] - model.measurement(x, first + j)? + &hx * x);
            c.push(hx);
        }
        assemble_qp(&HorizonProblem {
            x_bar: data.arrival.x_bar.clone(),
            p: data.arrival.p.clone(),
            q: data.q.clone(),
            r: data.r.clone(),
            a,
            drift,
            c,
            y,
            regularization: data.regularization,
        })
    }

    /// `‖c(z)‖₁` of the nonlinear dynamics and measurement constraints.
    fn violation<M: SystemModel + ?Sized>(model: &M, data: &WindowData, w: &WindowEstimate) -> Result<f64> {
        let first = data.first_step;
        let mut total = 0.0;
        for j in 0..w.horizon() {
            if j + 1 < w.horizon() {
                let pred = model.dynamics(&w.states[j], &data.inputs[j], first + j)?;
                total += (&w.states[j + 1] - pred - &w.process_noises[j]).lp_norm(1);
            }
            let out = model.measurement(&w.states[j], first + j)?;
            total += (&data.measurements[j] - out - &w.meas_noises[j]).lp_norm(1);
        }
        Ok(total)
    }
}

impl Default for SqpIteration {
    fn default() -> Self {
        Self::new(SqpOptions::default(), KktOptions::default())
    }
}

impl<M: SystemModel> WindowSolver<M> for SqpIteration {
    fn solve_window(
        &mut self,
        model: &M,
        data: &WindowData,
        initial: Vec<DVector<f64>>,
        config: &EstimatorConfig,
    ) -> Result<InnerSolve> {
        let n_states = initial.len() * model.state_dim();
        let mut current = WindowEstimate::consistent_with(model, initial, data)?;
        let mut displacements = Vec::new();
        let mut qp_residuals = Vec::new();
        let mut flagged = false;
        let mut penalty = 0.0_f64;

        for _ in 0..self.options.max_iterations {
            let qp = Self::linearize(model, data, &current.states)?;
            let layout = qp.layout.expect("structured QP");
            let sol = self.kkt.solve(&qp)?;
            qp_residuals.push(sol.kkt_residual);

            let z = current.flatten();
            let d = &sol.z_star - &z;
            let full_step = d.rows(0, n_states).norm();
            if full_step < config.tolerance {
                current = WindowEstimate::unflatten(&layout, &sol.z_star)?;
                displacements.push(full_step);
                break;
            }

            penalty = penalty.max(1.1 * sol.multipliers.amax());
            let merit = |w: &WindowEstimate, zz: &DVector<f64>| -> Option<f64> {
                let v = Self::violation(model, data, w).ok()?;
                let m = qp.objective(zz) + penalty * v;
                m.is_finite().then_some(m)
            };
            let merit0 = merit(&current, &z).expect("current iterate is finite");
            let grad = &qp.hessian * &z + &qp.linear;
            let slope = grad.dot(&d) - penalty * Self::violation(model, data, &current)?;

            let mut t = 1.0;
            let mut accepted = None;
            for _ in 0..=self.options.max_halvings {
                let trial = &z + &d * t;
                let w = WindowEstimate::unflatten(&layout, &trial)?;
                if let Some(m) = merit(&w, &trial) {
                    if m <= merit0 + self.options.armijo * t * slope.min(0.0) {
                        accepted = Some(w);
                        break;
                    }
                }
                t *= 0.5;
            }
            match accepted {
                Some(w) => {
                    let delta = t * full_step;
                    displacements.push(delta);
                    current = w;
                    if delta < config.tolerance {
                        break;
                    }
                }
                None => {
                    displacements.push(0.0);
                    flagged = true;
                    break;
                }
            }
        }
        Ok(InnerSolve {
            window: current,
            displacements,
            qp_residuals,
            flagged,
        })
    }

    fn stage_model(&self, model: &M, x: &DVector<f64>, u: &DVector<f64>, k: usize) -> Result<StageModel> {
        let (a, c) = model.jacobians(x, u, k)?;
        Ok(StageModel {
            drift: model.dynamics(x, u, k)? - &a * x,
            offset: model.measurement(x, k)? - &c * x,
            a,
            c,
        })
    }
}

/// Nonlinear MHE solved by SQP.
pub type NonlinearMhe<M> = MovingHorizonEstimator<M, SqpIteration>;

impl<M: SystemModel + Clone> MovingHorizonEstimator<M, SqpIteration> {
    pub fn new(
        model: M,
        noise: NoiseSpec,
        config: EstimatorConfig,
        prior: ArrivalCost,
        sqp: SqpOptions,
    ) -> Result<Self> {
        let solver = SqpIteration::new(sqp, config.kkt);
        MovingHorizonEstimator::with_solver(model, noise, config, prior, solver)
    }
}

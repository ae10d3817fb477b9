//! Small dense Levenberg–Marquardt solver shared by scan registration and
//! band optimization.
//!
//! Minimizes `‖r(x)‖²`. A trial step is accepted only when it lowers the cost,
//! so the sequence of accepted costs is non-increasing. Damping follows
//! Nielsen's gain-ratio rule.

use nalgebra::{DMatrix, DVector};

pub trait LeastSquaresProblem {
    fn residuals(&self, x: &DVector<f64>) -> DVector<f64>;

    fn jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        numeric_jacobian(|p| self.residuals(p), x, 1e-6)
    }

    /// Pulls a trial point back into the feasible parameter set (bounds etc.).
    fn project(&self, _x: &mut DVector<f64>) {}
}

/// Central-difference Jacobian.
pub fn numeric_jacobian<F>(f: F, x: &DVector<f64>, step: f64) -> DMatrix<f64>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    let r0 = f(x);
    let mut jac = DMatrix::zeros(r0.len(), x.len());
    let mut xp = x.clone();
    for j in 0..x.len() {
        let orig = xp[j];
        xp[j] = orig + step;
        let rp = f(&xp);
        xp[j] = orig - step;
        let rm = f(&xp);
        xp[j] = orig;
        jac.set_column(j, &((rp - rm) / (2.0 * step)));
    }
    jac
}

/// Damping increases tried per linearization before giving up.
const MAX_RETRIES: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LmConfig {
    /// Upper bound on linearizations; each may retry the step with more damping.
    pub max_iterations: usize,
    pub step_tolerance: f64,
    pub cost_tolerance: f64,
    pub initial_lambda: f64,
    /// Keep every accepted iterate in the report.
    pub record_iterates: bool,
}

impl Default for LmConfig {
    fn default() -> Self {
        Self {
            max_iterations: 25,
            step_tolerance: 1e-8,
            cost_tolerance: 1e-10,
            initial_lambda: 1e-3,
            record_iterates: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    MaxIterations,
    SmallStep,
    SmallDecrease,
    /// Damping grew past any useful value without finding a descent step.
    Stalled,
}

#[derive(Debug, Clone)]
pub struct LmReport {
    pub x: DVector<f64>,
    pub initial_cost: f64,
    pub cost: f64,
    pub iterations: usize,
    /// Cost after each accepted step, starting with the initial cost.
    pub cost_history: Vec<f64>,
    /// Accepted iterates, starting with the projected initial point; empty
    /// unless requested.
    pub iterates: Vec<DVector<f64>>,
    pub termination: Termination,
}

pub fn solve<P: LeastSquaresProblem + ?Sized>(problem: &P, x0: DVector<f64>, cfg: &LmConfig) -> LmReport {
    let mut x = x0;
    problem.project(&mut x);
    let mut r = problem.residuals(&x);
    let mut cost = r.norm_squared();
    let initial_cost = cost;
    let mut history = vec![cost];
    let mut iterates = Vec::new();
    if cfg.record_iterates {
        iterates.push(x.clone());
    }
    let mut lambda = cfg.initial_lambda;
    let mut nu = 2.0;
    let mut jac = problem.jacobian(&x);
    let mut termination = Termination::MaxIterations;
    let mut iterations = 0;

    if !cost.is_finite() {
        return LmReport {
            x,
            initial_cost,
            cost,
            iterations,
            cost_history: history,
            iterates,
            termination: Termination::Stalled,
        };
    }

    'outer: while iterations < cfg.max_iterations {
        iterations += 1;
        let jt = jac.transpose();
        let hessian = &jt * &jac;
        let gradient = &jt * &r;
        // Raise the damping until a step lowers the cost.
        for _ in 0..MAX_RETRIES {
            let mut damped = hessian.clone();
            for i in 0..damped.nrows() {
                damped[(i, i)] += lambda * (hessian[(i, i)] + 1e-9);
            }
            let Some(chol) = damped.cholesky() else {
                lambda *= 10.0;
                continue;
            };
            let step = -chol.solve(&gradient);
            // Cost reduction predicted by the linear model.
            let predicted = -(2.0 * gradient.dot(&step) + step.dot(&(&hessian * &step)));
            if step.norm() < cfg.step_tolerance {
                termination = Termination::SmallStep;
                break 'outer;
            }
            let mut trial = &x + &step;
            problem.project(&mut trial);
            let r_trial = problem.residuals(&trial);
            let cost_trial = r_trial.norm_squared();
            if cost_trial.is_finite() && cost_trial < cost {
                let decrease = cost - cost_trial;
                x = trial;
                r = r_trial;
                cost = cost_trial;
                history.push(cost);
                if cfg.record_iterates {
                    iterates.push(x.clone());
                }
                let rho = if predicted > 0.0 { decrease / predicted } else { 1.0 };
                lambda = (lambda * (1.0 / 3.0f64).max(1.0 - (2.0 * rho - 1.0).powi(3))).max(1e-12);
                nu = 2.0;
                if decrease < cfg.cost_tolerance {
                    termination = Termination::SmallDecrease;
                    break 'outer;
                }
                jac = problem.jacobian(&x);
                continue 'outer;
            }
            lambda *= nu;
            nu *= 2.0;
        }
        termination = Termination::Stalled;
        break;
    }

    LmReport {
        x,
        initial_cost,
        cost,
        iterations,
        cost_history: history,
        iterates,
        termination,
    }
}

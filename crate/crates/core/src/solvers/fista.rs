use ndarray::Array2;

use super::{check_finite, check_lipschitz, relative_change, IterationRecord, SolverOutcome, SolverSettings};
use crate::error::Result;

/// `f + g` with `f` smooth and `g` proximable.
pub trait CompositeProblem {
    /// Value and gradient of the smooth term.
    fn smooth(&mut self, x: &Array2<f64>) -> Result<(f64, Array2<f64>)>;

    fn smooth_value(&mut self, x: &Array2<f64>) -> Result<f64> {
        Ok(self.smooth(x)?.0)
    }

    /// Value of the nonsmooth term at a point in its domain.
    fn nonsmooth(&mut self, x: &Array2<f64>) -> Result<f64>;

    /// `argmin_z g(z) + ||z - v||^2 / (2 step)`.
    fn prox(&mut self, v: Array2<f64>, step: f64) -> Result<Array2<f64>>;
}

/// Accelerated proximal gradient with step `1 / lipschitz` and
/// function-value restart.
///
/// A step that increases the objective is rejected and the momentum is
/// reset, so the objective at the accepted iterates never increases.
pub fn fista_minimize<P: CompositeProblem>(
    problem: &mut P,
    x0: Array2<f64>,
    lipschitz: f64,
    settings: &SolverSettings,
    mut trace: Option<&mut dyn FnMut(&IterationRecord)>,
) -> Result<SolverOutcome> {
    settings.validate()?;
    check_lipschitz(lipschitz)?;
    let step = 1.0 / lipschitz;

    let mut x = problem.prox(x0, step)?;
    let mut objective = problem.smooth_value(&x)? + problem.nonsmooth(&x)?;
    let mut y = x.clone();
    let mut momentum = 1.0f64;
    let mut accelerated = false;
    let mut restarts = 0;
    let mut residual = f64::INFINITY;
    let mut converged = false;
    let mut iterations = 0;

    for k in 1..=settings.max_iter {
        iterations = k;
        let (_, grad) = problem.smooth(&y)?;
        check_finite(&grad, "gradient", k)?;
        let mut v = y;
        v.scaled_add(-step, &grad);
        let candidate = problem.prox(v, step)?;
        check_finite(&candidate, "iterate", k)?;
        let candidate_obj = problem.smooth_value(&candidate)? + problem.nonsmooth(&candidate)?;

        if candidate_obj > objective && accelerated {
            // restart from the last accepted point
            momentum = 1.0;
            accelerated = false;
            restarts += 1;
            y = x.clone();
            if let Some(cb) = trace.as_deref_mut() {
                cb(&IterationRecord {
                    iteration: k,
                    objective,
                    residual: 0.0,
                    restarted: true,
                });
            }
            continue;
        }

        residual = relative_change(&candidate, &x);
        let next_momentum = 0.5 * (1.0 + (1.0 + 4.0 * momentum * momentum).sqrt());
        let beta = (momentum - 1.0) / next_momentum;
        y = &candidate + &((&candidate - &x) * beta);
        accelerated = beta > 0.0;
        momentum = next_momentum;
        x = candidate;
        objective = candidate_obj;
        if let Some(cb) = trace.as_deref_mut() {
            cb(&IterationRecord {
                iteration: k,
                objective,
                residual,
                restarted: false,
            });
        }
        if residual < settings.tol {
            converged = true;
            break;
        }
    }

    Ok(SolverOutcome {
        x,
        iterations,
        converged,
        restarts,
        residual,
    })
}

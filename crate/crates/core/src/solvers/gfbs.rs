use ndarray::Array2;

use super::{check_finite, check_lipschitz, relative_change, IterationRecord, SolverOutcome, SolverSettings};
use crate::error::{Error, Result};

/// `f + g_0 + g_1` with `f` smooth and both `g_i` proximable.
pub trait SplitProblem {
    fn gradient(&mut self, x: &Array2<f64>) -> Result<Array2<f64>>;

    /// Proximal map of term `term` (0 or 1) with step `step`.
    fn prox(&mut self, term: usize, v: Array2<f64>, step: f64) -> Result<Array2<f64>>;

    /// Full objective, only evaluated when a trace callback is installed.
    fn objective(&mut self, _x: &Array2<f64>) -> Result<f64> {
        Ok(f64::NAN)
    }
}

/// Generalized forward-backward splitting with two proximal terms and
/// step `1 / lipschitz`.
///
/// Each auxiliary variable is reflected through its own proximal map:
/// `z_i += prox_{g_i, step / w_i}(2x - z_i - step * grad(x)) - x`, and the
/// iterate is the weighted average of the `z_i`.
pub fn gfbs_minimize<P: SplitProblem>(
    problem: &mut P,
    x0: Array2<f64>,
    weights: [f64; 2],
    lipschitz: f64,
    settings: &SolverSettings,
    mut trace: Option<&mut dyn FnMut(&IterationRecord)>,
) -> Result<SolverOutcome> {
    settings.validate()?;
    check_lipschitz(lipschitz)?;
    if weights.iter().any(|w| !(*w > 0.0)) || (weights[0] + weights[1] - 1.0).abs() > 1e-12 {
        return Err(Error::InvalidParameter(format!(
            "splitting weights must be positive and sum to one, got {weights:?}"
        )));
    }
    let step = 1.0 / lipschitz;

    let mut x = x0;
    let mut z = [x.clone(), x.clone()];
    let mut residual = f64::INFINITY;
    let mut converged = false;
    let mut iterations = 0;

    for k in 1..=settings.max_iter {
        iterations = k;
        let grad = problem.gradient(&x)?;
        check_finite(&grad, "gradient", k)?;
        let mut forward = x.clone();
        forward.scaled_add(-step, &grad);

        let mut next = Array2::zeros(x.dim());
        for (i, zi) in z.iter_mut().enumerate() {
            // 2x - z_i - step * grad = forward + (x - z_i)
            let mut arg = &forward + &x;
            arg -= &*zi;
            let p = problem.prox(i, arg, step / weights[i])?;
            *zi += &p;
            *zi -= &x;
            next.scaled_add(weights[i], zi);
        }
        check_finite(&next, "iterate", k)?;

        residual = relative_change(&next, &x);
        x = next;
        if let Some(cb) = trace.as_deref_mut() {
            let objective = problem.objective(&x)?;
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
        restarts: 0,
        residual,
    })
}

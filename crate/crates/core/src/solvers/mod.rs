//! Inner solvers used by the block-coordinate outer loop.
//!
//! [`fista_minimize`] handles a smooth term plus one proximable term and
//! [`gfbs_minimize`] handles a smooth term plus two proximable terms.
//! Both work on dense `Array2<f64>` iterates and stop on the relative
//! Frobenius change of the iterate.

mod fista;
mod gfbs;

pub use fista::{fista_minimize, CompositeProblem};
pub use gfbs::{gfbs_minimize, SplitProblem};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSettings {
    pub max_iter: usize,
    /// Stop once `||x_{k+1} - x_k||_F / ||x_k||_F` drops below this.
    pub tol: f64,
}

impl SolverSettings {
    pub fn new(max_iter: usize, tol: f64) -> Result<Self> {
        let settings = Self { max_iter, tol };
        settings.validate()?;
        Ok(settings)
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_iter == 0 {
            return Err(Error::InvalidParameter("max_iter must be at least 1".into()));
        }
        if !(self.tol > 0.0) {
            return Err(Error::InvalidParameter(format!("tol must be positive, got {}", self.tol)));
        }
        Ok(())
    }
}

/// One entry of a solver trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    /// Objective at the current iterate, `NaN` when not computed.
    pub objective: f64,
    /// Relative change of the iterate.
    pub residual: f64,
    pub restarted: bool,
}

#[derive(Debug, Clone)]
pub struct SolverOutcome {
    pub x: Array2<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub restarts: usize,
    /// Last relative change of the iterate.
    pub residual: f64,
}

pub(crate) fn frobenius(m: &Array2<f64>) -> f64 {
    m.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub(crate) fn relative_change(new: &Array2<f64>, old: &Array2<f64>) -> f64 {
    let diff = new
        .iter()
        .zip(old.iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    let scale = frobenius(old);
    if scale > 0.0 {
        diff / scale
    } else {
        diff
    }
}

pub(crate) fn check_finite(m: &Array2<f64>, what: &str, iteration: usize) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::SolverAbort(format!(
            "non-finite {what} at iteration {iteration}"
        )))
    }
}

pub(crate) fn check_lipschitz(lipschitz: f64) -> Result<()> {
    if lipschitz > 0.0 && lipschitz.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!(
            "Lipschitz constant must be positive and finite, got {lipschitz}"
        )))
    }
}

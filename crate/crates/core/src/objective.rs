//! Poisson anti-log-likelihood and its Moreau-envelope surrogate.
//!
//! Per entry the data term is `phi(z) = z - x log z` (with `0 log 0 = 0`).
//! The surrogate replaces `phi` by its Moreau envelope with parameter `mu`,
//!
//! ```text
//! env(y) = min_z phi(z) + (z - y)^2 / (2 mu),
//! ```
//!
//! whose minimizer has a closed form and whose gradient `(y - z*) / mu` is
//! `1/mu`-Lipschitz. The envelope is finite on all of R.

use ndarray::{Array2, ArrayView2, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Moreau smoothing parameter, strictly positive.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct SmoothingParameter(f64);

impl SmoothingParameter {
    pub fn new(mu: f64) -> Result<Self> {
        if mu > 0.0 && mu.is_finite() {
            Ok(Self(mu))
        } else {
            Err(Error::InvalidParameter(format!(
                "smoothing parameter must be positive and finite, got {mu}"
            )))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveValue {
    pub data_fidelity: f64,
    pub l1_penalty: f64,
    pub total: f64,
}

impl ObjectiveValue {
    pub fn new(data_fidelity: f64, l1_penalty: f64) -> Self {
        Self {
            data_fidelity,
            l1_penalty,
            total: data_fidelity + l1_penalty,
        }
    }
}

fn check_same_shape(x: &ArrayView2<f64>, y: &ArrayView2<f64>) -> Result<()> {
    if x.dim() != y.dim() {
        return Err(Error::Shape(format!(
            "observations are {:?}, model is {:?}",
            x.dim(),
            y.dim()
        )));
    }
    Ok(())
}

/// `z - x log z` with the `0 log 0 = 0` convention.
#[inline]
fn poisson_term(z: f64, x: f64) -> f64 {
    if x == 0.0 {
        z
    } else if z <= 0.0 {
        f64::INFINITY
    } else {
        z - x * z.ln()
    }
}

/// Sum over entries of `y - x log y`.
///
/// Returns `+inf` when some `y` is zero where `x` is positive; negative
/// model entries are an error.
pub fn poisson_nll(x: &ArrayView2<f64>, y: &ArrayView2<f64>) -> Result<f64> {
    check_same_shape(x, y)?;
    let mut total = 0.0;
    for ((idx, &yv), &xv) in y.indexed_iter().zip(x.iter()) {
        if yv < 0.0 {
            return Err(Error::NegativeEntry {
                row: idx.0,
                col: idx.1,
                value: yv,
            });
        }
        total += poisson_term(yv, xv);
    }
    Ok(total)
}

/// Proximal map of `z - x log z` at `v` with step `gamma`: the nonnegative
/// root of `z^2 - (v - gamma) z - gamma x = 0`.
#[inline]
pub fn prox_poisson_entry(v: f64, gamma: f64, x: f64) -> f64 {
    let d = v - gamma;
    let disc = (d * d + 4.0 * gamma * x).sqrt();
    if d >= 0.0 {
        0.5 * (d + disc)
    } else if x == 0.0 {
        0.0
    } else {
        // cancellation-free form of the same root
        2.0 * gamma * x / (disc - d)
    }
}

#[inline]
fn envelope_entry(y: f64, mu: f64, x: f64) -> (f64, f64) {
    let z = prox_poisson_entry(y, mu, x);
    let value = poisson_term(z, x) + (z - y) * (z - y) / (2.0 * mu);
    (value, (y - z) / mu)
}

/// Moreau envelope of the Poisson anti-log-likelihood, summed over entries.
pub fn smoothed_nll(x: &ArrayView2<f64>, y: &ArrayView2<f64>, mu: SmoothingParameter) -> Result<f64> {
    check_same_shape(x, y)?;
    let mu = mu.value();
    let mut total = 0.0;
    Zip::from(y)
        .and(x)
        .for_each(|&yv, &xv| total += envelope_entry(yv, mu, xv).0);
    Ok(total)
}

/// Gradient of the envelope with respect to the mixture `y`.
pub fn grad_smoothed_wrt_mixture(
    x: &ArrayView2<f64>,
    y: &ArrayView2<f64>,
    mu: SmoothingParameter,
) -> Result<Array2<f64>> {
    Ok(smoothed_value_and_grad(x, y, mu)?.1)
}

/// Envelope value and gradient in one pass.
pub fn smoothed_value_and_grad(
    x: &ArrayView2<f64>,
    y: &ArrayView2<f64>,
    mu: SmoothingParameter,
) -> Result<(f64, Array2<f64>)> {
    check_same_shape(x, y)?;
    let mu = mu.value();
    let mut grad = Array2::zeros(y.dim());
    let mut total = 0.0;
    Zip::from(&mut grad).and(y).and(x).for_each(|g, &yv, &xv| {
        let (value, slope) = envelope_entry(yv, mu, xv);
        total += value;
        *g = slope;
    });
    Ok((total, grad))
}

fn check_factors(x: &ArrayView2<f64>, a: &ArrayView2<f64>, s: &ArrayView2<f64>) -> Result<()> {
    if a.ncols() != s.nrows() || a.nrows() != x.nrows() || s.ncols() != x.ncols() {
        return Err(Error::Shape(format!(
            "X is {:?}, A is {:?}, S is {:?}",
            x.dim(),
            a.dim(),
            s.dim()
        )));
    }
    Ok(())
}

/// `A^T G` with `G` the mixture gradient at `AS`.
pub fn grad_smoothed_wrt_s(
    x: &ArrayView2<f64>,
    a: &ArrayView2<f64>,
    s: &ArrayView2<f64>,
    mu: SmoothingParameter,
) -> Result<Array2<f64>> {
    check_factors(x, a, s)?;
    let g = grad_smoothed_wrt_mixture(x, &a.dot(s).view(), mu)?;
    Ok(a.t().dot(&g))
}

/// `G S^T` with `G` the mixture gradient at `AS`.
pub fn grad_smoothed_wrt_a(
    x: &ArrayView2<f64>,
    a: &ArrayView2<f64>,
    s: &ArrayView2<f64>,
    mu: SmoothingParameter,
) -> Result<Array2<f64>> {
    check_factors(x, a, s)?;
    let g = grad_smoothed_wrt_mixture(x, &a.dot(s).view(), mu)?;
    Ok(g.dot(&s.t()))
}

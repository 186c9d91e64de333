//! Generalized Morphological Component Analysis under a Gaussian noise
//! model. Used as a baseline and as the initializer of the Poisson solver.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{MixingMatrix, ObservationMatrix, SourceMatrix};
use crate::error::{Error, Result};
use crate::linalg::{leading_eigenvectors, solve_gram};
use crate::prox::{project_c_column, soft_threshold};
use crate::starlet::{check_scales, default_scales, starlet_forward};

/// Gaussian-consistency factor of the median absolute deviation.
pub const MAD_FACTOR: f64 = 1.4826;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GmcaSettings {
    pub n_iter: usize,
    /// Threshold in MAD units at the first iteration.
    pub k_start: f64,
    /// Threshold in MAD units at the last iteration.
    pub k_end: f64,
    /// Starlet scales; `None` picks [`default_scales`] for the image size.
    pub scales: Option<usize>,
    pub seed: u64,
}

impl Default for GmcaSettings {
    fn default() -> Self {
        Self {
            n_iter: 100,
            k_start: 3.0,
            k_end: 3.0,
            scales: None,
            seed: 0,
        }
    }
}

impl GmcaSettings {
    pub fn validate(&self) -> Result<()> {
        if self.n_iter == 0 {
            return Err(Error::InvalidParameter("GMCA needs at least one iteration".into()));
        }
        if !(self.k_end >= 0.0) || !(self.k_start >= 0.0) {
            return Err(Error::InvalidParameter("GMCA thresholds must be nonnegative".into()));
        }
        Ok(())
    }

    fn threshold_at(&self, iteration: usize) -> f64 {
        if self.n_iter == 1 {
            return self.k_end;
        }
        let frac = iteration as f64 / (self.n_iter - 1) as f64;
        self.k_start + (self.k_end - self.k_start) * frac
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GmcaDiagnostics {
    /// Number of least-squares solves that needed the ridge fallback.
    pub ridge_fallbacks: usize,
    /// Initial mixing columns replaced because they duplicated another one.
    pub reseeded_columns: usize,
}

#[derive(Debug, Clone)]
pub struct GmcaOutput {
    pub mixing: MixingMatrix,
    pub sources: SourceMatrix,
    pub diagnostics: GmcaDiagnostics,
    /// `||A_{k+1} - A_k||_F` after each iteration.
    pub delta_a_trace: Vec<f64>,
}

/// Median with the two middle order statistics averaged for even lengths.
pub fn median(values: &mut [f64]) -> Result<f64> {
    let n = values.len();
    if n == 0 {
        return Err(Error::InvalidParameter("median of an empty list".into()));
    }
    let mid = n / 2;
    let (lower, upper, _) = values.select_nth_unstable_by(mid, f64::total_cmp);
    let upper = *upper;
    if n % 2 == 1 {
        Ok(upper)
    } else {
        let below = lower.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Ok(0.5 * (below + upper))
    }
}

/// Robust standard deviation: `1.4826 * median(|v - median(v)|)`.
pub fn mad_sigma(values: &[f64]) -> Result<f64> {
    let mut work = values.to_vec();
    let center = median(&mut work)?;
    for (w, v) in work.iter_mut().zip(values) {
        *w = (v - center).abs();
    }
    Ok(MAD_FACTOR * median(&mut work)?)
}

/// Per-source sparse denoising: starlet transform, soft-threshold each
/// detail plane at `k` times the MAD noise estimate taken from the same
/// plane of `noise`, resynthesize, clip negatives.
fn threshold_sources(
    s: &mut Array2<f64>,
    noise: &Array2<f64>,
    height: usize,
    width: usize,
    scales: usize,
    k: f64,
) -> Result<()> {
    for (mut row, noise_row) in s.axis_iter_mut(Axis(0)).zip(noise.axis_iter(Axis(0))) {
        let image = row.to_shape((height, width)).expect("row-major image").to_owned();
        let noise_image = noise_row.to_shape((height, width)).expect("row-major image").to_owned();
        let stack = starlet_forward(&image.view(), scales)?;
        let noise_stack = starlet_forward(&noise_image.view(), scales)?;
        let mut acc = stack.coarse;
        for (plane, noise_plane) in stack.details.iter().zip(&noise_stack.details) {
            let sigma = mad_sigma(noise_plane.as_slice().expect("contiguous"))?;
            let threshold = k * sigma;
            acc.zip_mut_with(plane, |a, &d| *a += soft_threshold(d, threshold));
        }
        for (dst, &src) in row.iter_mut().zip(acc.iter()) {
            *dst = src.max(0.0);
        }
    }
    Ok(())
}

/// Initial mixing matrix: absolute values of the `n` leading left singular
/// vectors of `X`, unit columns.
fn initial_mixing(x: &ArrayView2<f64>, n: usize, seed: u64, diagnostics: &mut GmcaDiagnostics) -> Array2<f64> {
    let xxt = x.dot(&x.t());
    let mut a = leading_eigenvectors(&xxt.view(), n).mapv(f64::abs);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for j in 0..n {
        let duplicate = (0..j).any(|k| a.column(j).dot(&a.column(k)) > 1.0 - 1e-9);
        let norm = a.column(j).dot(&a.column(j)).sqrt();
        if duplicate || norm == 0.0 {
            diagnostics.reseeded_columns += 1;
            for v in a.column_mut(j).iter_mut() {
                *v = rng.random_range(0.05..1.0);
            }
        }
        let norm = a.column(j).dot(&a.column(j)).sqrt();
        a.column_mut(j).mapv_inplace(|v| v / norm);
    }
    a
}

/// Alternating sparse least squares on `X ~ A S`.
pub fn gmca_run(x: &ObservationMatrix, n: usize, settings: &GmcaSettings) -> Result<GmcaOutput> {
    settings.validate()?;
    let (m, _) = x.data().dim();
    if n == 0 || n > m {
        return Err(Error::InvalidParameter(format!(
            "source count {n} must be between 1 and the channel count {m}"
        )));
    }
    let (height, width) = (x.height(), x.width());
    let scales = settings.scales.unwrap_or_else(|| default_scales(height, width));
    check_scales(height, width, scales)?;
    let xd = x.data();

    let mut diagnostics = GmcaDiagnostics::default();
    let mut a = initial_mixing(&xd.view(), n, settings.seed, &mut diagnostics);
    let mut s = Array2::zeros((n, xd.ncols()));
    let mut delta_a_trace = Vec::with_capacity(settings.n_iter);

    for it in 0..settings.n_iter {
        let previous = a.clone();
        // S <- threshold(A^+ X), noise level read off A^+ (X - A S)
        let (ls, ridged) = solve_gram(&a.t().dot(&a).view(), &a.t().dot(xd).view());
        diagnostics.ridge_fallbacks += ridged as usize;
        let residual = &ls - &s;
        s = ls;
        threshold_sources(&mut s, &residual, height, width, scales, settings.threshold_at(it))?;

        // A <- X S^+, projected onto C; sources that vanished keep their column
        let active: Vec<bool> = s.rows().into_iter().map(|r| r.iter().any(|&v| v > 0.0)).collect();
        if !active.iter().any(|&b| b) {
            delta_a_trace.push(0.0);
            continue;
        }
        let (at, ridged) = solve_gram(&s.dot(&s.t()).view(), &s.dot(&xd.t()).view());
        diagnostics.ridge_fallbacks += ridged as usize;
        for (j, &is_active) in active.iter().enumerate() {
            if !is_active {
                continue;
            }
            let mut col: Array1<f64> = at.row(j).to_owned();
            project_c_column(col.view_mut());
            if col.iter().any(|&v| v > 0.0) {
                a.column_mut(j).assign(&col);
            }
        }
        delta_a_trace.push((&a - &previous).mapv(|v| v * v).sum().sqrt());
    }

    Ok(GmcaOutput {
        mixing: MixingMatrix::new(a)?,
        sources: SourceMatrix::new(s, height, width)?,
        diagnostics,
        delta_a_trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn mad_examples() {
        assert!((mad_sigma(&[1.0, 2.0, 3.0, 4.0, 5.0]).unwrap() - 1.4826).abs() < 1e-15);
        assert_eq!(mad_sigma(&[2.5; 7]).unwrap(), 0.0);
        assert!(mad_sigma(&[]).is_err());
    }

    #[test]
    fn median_even_length() {
        assert_eq!(median(&mut [4.0, 1.0, 3.0, 2.0]).unwrap(), 2.5);
        assert_eq!(median(&mut [5.0]).unwrap(), 5.0);
    }

    #[test]
    fn mad_of_gaussian_samples() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let v: Vec<f64> = (0..100_000).map(|_| StandardNormal.sample(&mut rng)).collect();
        let sigma = mad_sigma(&v).unwrap();
        assert!((sigma - 1.0).abs() < 0.05, "{sigma}");
    }

    #[test]
    fn threshold_schedule() {
        let s = GmcaSettings {
            n_iter: 5,
            k_start: 5.0,
            k_end: 1.0,
            ..Default::default()
        };
        assert_eq!(s.threshold_at(0), 5.0);
        assert_eq!(s.threshold_at(4), 1.0);
        assert_eq!(s.threshold_at(2), 3.0);
    }

    #[test]
    fn rejects_too_many_sources() {
        let x = ObservationMatrix::new(Array2::ones((2, 64)), 8, 8).unwrap();
        assert!(gmca_run(&x, 3, &GmcaSettings::default()).is_err());
        assert!(gmca_run(&x, 0, &GmcaSettings::default()).is_err());
    }
}

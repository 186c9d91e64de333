//! Proximal and projection operators.

use ndarray::{Array2, ArrayView2, ArrayViewMut1, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::starlet::{starlet_forward, StarletStack};

/// Per-source sparsity weights. `lambda` already includes the `tau`
/// multiplier; `tau` is kept for reporting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegularizationWeights {
    pub lambda: Vec<f64>,
    pub tau: f64,
}

impl RegularizationWeights {
    pub fn new(lambda: Vec<f64>, tau: f64) -> Result<Self> {
        if let Some(bad) = lambda.iter().find(|l| !(**l >= 0.0 && l.is_finite())) {
            return Err(Error::InvalidParameter(format!("invalid sparsity weight {bad}")));
        }
        if !(tau > 0.0) {
            return Err(Error::InvalidParameter(format!("tau must be positive, got {tau}")));
        }
        Ok(Self { lambda, tau })
    }

    pub fn zeros(n: usize) -> Self {
        Self {
            lambda: vec![0.0; n],
            tau: 1.0,
        }
    }
}

#[inline]
pub fn soft_threshold(value: f64, threshold: f64) -> f64 {
    if value > threshold {
        value - threshold
    } else if value < -threshold {
        value + threshold
    } else {
        0.0
    }
}

/// Soft-thresholds every detail plane of `stack` in place; the coarse plane
/// is left untouched.
pub fn threshold_details(stack: &mut StarletStack, threshold: f64) {
    for plane in &mut stack.details {
        plane.mapv_inplace(|v| soft_threshold(v, threshold));
    }
}

/// Weighted l1 norm of the starlet detail coefficients of every source row.
pub fn sparsity_penalty(
    s: &ArrayView2<f64>,
    height: usize,
    width: usize,
    weights: &RegularizationWeights,
    scales: usize,
) -> Result<f64> {
    check_rows(s, height, width, weights)?;
    let mut total = 0.0;
    for (row, &lambda) in s.rows().into_iter().zip(&weights.lambda) {
        if lambda == 0.0 {
            continue;
        }
        let image = row.to_shape((height, width)).expect("row-major image");
        let stack = starlet_forward(&image.view(), scales)?;
        total += lambda * stack.detail_coefficients().map(f64::abs).sum::<f64>();
    }
    Ok(total)
}

fn check_rows(s: &ArrayView2<f64>, height: usize, width: usize, weights: &RegularizationWeights) -> Result<()> {
    if s.ncols() != height * width {
        return Err(Error::Shape(format!(
            "rows of length {} are not {height}x{width} images",
            s.ncols()
        )));
    }
    if weights.lambda.len() != s.nrows() {
        return Err(Error::Shape(format!(
            "{} weights for {} sources",
            weights.lambda.len(),
            s.nrows()
        )));
    }
    Ok(())
}

/// Analysis-domain thresholding: per source, starlet transform, soft
/// threshold the detail planes at `step * lambda_i`, resynthesize. This is
/// the exact prox for an orthonormal representation and an approximation
/// for the redundant starlet frame.
pub fn prox_sparsity(
    s: &ArrayView2<f64>,
    height: usize,
    width: usize,
    weights: &RegularizationWeights,
    step: f64,
    scales: usize,
) -> Result<Array2<f64>> {
    check_rows(s, height, width, weights)?;
    let mut out = s.to_owned();
    for (mut row, &lambda) in out.axis_iter_mut(Axis(0)).zip(&weights.lambda) {
        let threshold = step * lambda;
        if threshold == 0.0 {
            continue;
        }
        let image = row.to_shape((height, width)).expect("row-major image").to_owned();
        let mut stack = starlet_forward(&image.view(), scales)?;
        let mut acc = stack.coarse.clone();
        for plane in &mut stack.details {
            acc.zip_mut_with(plane, |a, &d| *a += soft_threshold(d, threshold));
        }
        row.assign(&acc.into_shape_with_order(height * width).expect("contiguous"));
    }
    Ok(out)
}

pub fn project_nonneg(m: &ArrayView2<f64>) -> Array2<f64> {
    m.mapv(|v| v.max(0.0))
}

/// Euclidean projection onto `{a >= 0, ||a||_2 <= 1}`: clip, then scale
/// back onto the ball if needed.
pub fn project_c_column(mut a: ArrayViewMut1<f64>) {
    a.mapv_inplace(|v| v.max(0.0));
    let norm = a.dot(&a).sqrt();
    if norm > 1.0 {
        a.mapv_inplace(|v| v / norm);
        // rounding can leave the norm a few ulps above one
        let again = a.dot(&a).sqrt();
        if again > 1.0 {
            a.mapv_inplace(|v| v / again);
        }
    }
}

pub fn project_c(a: &ArrayView2<f64>) -> Array2<f64> {
    let mut out = a.to_owned();
    for column in out.columns_mut() {
        project_c_column(column);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::starlet::starlet_synthesis;
    use ndarray::{array, Array1};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn soft_threshold_cases() {
        assert_eq!(soft_threshold(2.0, 0.5), 1.5);
        assert_eq!(soft_threshold(-0.3, 0.5), 0.0);
        assert_eq!(soft_threshold(-2.0, 0.5), -1.5);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let x: f64 = rng.random_range(-10.0..10.0);
            assert_eq!(soft_threshold(x, 0.0), x);
        }
    }

    #[test]
    fn soft_threshold_minimizes_by_grid_search() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let v: f64 = rng.random_range(-3.0..3.0);
            let lam: f64 = rng.random_range(0.0..2.0);
            let obj = |z: f64| lam * z.abs() + 0.5 * (z - v) * (z - v);
            let best = (0..=60_000)
                .map(|k| -3.0 + k as f64 * 1e-4)
                .min_by(|a, b| obj(*a).total_cmp(&obj(*b)))
                .unwrap();
            assert!((best - soft_threshold(v, lam)).abs() <= 1e-4);
        }
    }

    #[test]
    fn nonneg_projection() {
        assert_eq!(project_nonneg(&array![[-1.0, 2.0]].view()), array![[0.0, 2.0]]);
        let m = array![[1.0, 2.0], [3.0, 0.5]];
        assert_eq!(project_nonneg(&m.view()), m);
    }

    #[test]
    fn c_projection_cases() {
        let mut a = array![0.6, 0.8];
        project_c_column(a.view_mut());
        assert_eq!(a, array![0.6, 0.8]);
        let mut a = array![-1.0, 2.0];
        project_c_column(a.view_mut());
        assert_eq!(a, array![0.0, 1.0]);
        let mut a = array![3.0, 4.0];
        project_c_column(a.view_mut());
        assert!((a[0] - 0.6).abs() < 1e-15 && (a[1] - 0.8).abs() < 1e-15);
        let mut a = array![-1.0, -2.0];
        project_c_column(a.view_mut());
        assert_eq!(a, array![0.0, 0.0]);
    }

    #[test]
    fn zero_weights_are_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = Array2::from_shape_fn((2, 256), |_| rng.random_range(0.0..5.0));
        let out = prox_sparsity(&s.view(), 16, 16, &RegularizationWeights::zeros(2), 1.0, 2).unwrap();
        for (a, b) in out.iter().zip(s.iter()) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn constant_source_unchanged() {
        let s = Array2::from_elem((1, 64), 3.0);
        let w = RegularizationWeights::new(vec![10.0], 1.0).unwrap();
        let out = prox_sparsity(&s.view(), 8, 8, &w, 1.0, 2).unwrap();
        for v in out.iter() {
            assert!((v - 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn prox_sparsity_matches_composition() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let img = Array2::from_shape_fn((16, 16), |_| rng.random_range(0.0..1.0));
        let s = img.clone().into_shape_with_order((1, 256)).unwrap();
        let w = RegularizationWeights::new(vec![0.1], 1.0).unwrap();
        let out = prox_sparsity(&s.view(), 16, 16, &w, 1.0, 2).unwrap();

        let mut stack = starlet_forward(&img.view(), 2).unwrap();
        threshold_details(&mut stack, 0.1);
        let oracle = starlet_synthesis(&stack).unwrap();
        for (a, b) in out.iter().zip(oracle.iter()) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn penalty_counts_details_only() {
        let s = Array2::from_elem((1, 64), 3.0);
        let w = RegularizationWeights::new(vec![2.0], 1.0).unwrap();
        assert_eq!(sparsity_penalty(&s.view(), 8, 8, &w, 2).unwrap(), 0.0);
    }

    #[test]
    fn weights_validation() {
        assert!(RegularizationWeights::new(vec![-1.0], 1.0).is_err());
        assert!(RegularizationWeights::new(vec![1.0], 0.0).is_err());
        let s = Array2::zeros((2, 16));
        assert!(prox_sparsity(&s.view(), 4, 4, &RegularizationWeights::zeros(3), 1.0, 1).is_err());
    }

    /// Brute force projection onto the nonneg part of the unit ball in R^2
    /// and R^3: dense sampling in spherical coordinates over radius and angles.
    fn brute_force_projection(a: &Array1<f64>) -> Array1<f64> {
        let mut best = Array1::zeros(a.len());
        let mut best_dist = f64::INFINITY;
        let mut consider = |p: Array1<f64>| {
            let d = (&p - a).mapv(|v| v * v).sum();
            if d < best_dist {
                best_dist = d;
                best = p;
            }
        };
        let steps = 400;
        let half_pi = std::f64::consts::FRAC_PI_2;
        for r in 0..=steps {
            let r = r as f64 / steps as f64;
            match a.len() {
                2 => {
                    for k in 0..=steps {
                        let th = half_pi * k as f64 / steps as f64;
                        consider(array![r * th.cos(), r * th.sin()]);
                    }
                }
                3 => {
                    for k in 0..=steps / 4 {
                        let th = half_pi * k as f64 / (steps / 4) as f64;
                        for l in 0..=steps / 4 {
                            let ph = half_pi * l as f64 / (steps / 4) as f64;
                            consider(array![r * th.cos(), r * th.sin() * ph.cos(), r * th.sin() * ph.sin()]);
                        }
                    }
                }
                _ => unreachable!(),
            }
        }
        best
    }

    #[test]
    fn c_projection_matches_sampling() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for dim in [2usize, 3] {
            for _ in 0..5 {
                let a = Array1::from_shape_fn(dim, |_| rng.random_range(-2.0..2.0));
                let mut p = a.clone();
                project_c_column(p.view_mut());
                let q = brute_force_projection(&a);
                let dp = (&p - &a).mapv(|v| v * v).sum().sqrt();
                let dq = (&q - &a).mapv(|v| v * v).sum().sqrt();
                // the sampled point can only be farther than the true projection
                assert!(dp <= dq + 1e-12);
                assert!(dq - dp < 2e-2, "{a:?}");
            }
        }
    }

    proptest! {
        #[test]
        fn c_projection_feasible_idempotent_nonexpansive(
            x in proptest::collection::vec(-5.0f64..5.0, 1..6),
            shift in proptest::collection::vec(-5.0f64..5.0, 6),
        ) {
            let x = Array1::from(x);
            let y = Array1::from_iter(x.iter().zip(&shift).map(|(a, b)| a + b));
            let mut px = x.clone();
            project_c_column(px.view_mut());
            let mut py = y.clone();
            project_c_column(py.view_mut());
            prop_assert!(px.iter().all(|&v| v >= 0.0));
            prop_assert!(px.dot(&px).sqrt() <= 1.0 + 1e-15);
            let mut ppx = px.clone();
            project_c_column(ppx.view_mut());
            for (a, b) in ppx.iter().zip(px.iter()) {
                prop_assert!((a - b).abs() < 1e-15);
            }
            let d_out = (&px - &py).mapv(|v| v * v).sum().sqrt();
            let d_in = (&x - &y).mapv(|v| v * v).sum().sqrt();
            prop_assert!(d_out <= d_in + 1e-12);
        }

        #[test]
        fn nonneg_projection_idempotent(v in proptest::collection::vec(-5.0f64..5.0, 1..20)) {
            let m = Array2::from_shape_vec((1, v.len()), v).unwrap();
            let p = project_nonneg(&m.view());
            prop_assert_eq!(project_nonneg(&p.view()), p);
        }
    }
}

//! Small dense linear algebra on top of ndarray. The factorization
//! matrices here are at most `m x m` with `m` the channel count, so
//! nalgebra handles the decompositions.

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array1, Array2, ArrayView2};

/// Power iterations used for Lipschitz estimates.
pub const POWER_ITERATIONS: usize = 20;

/// Largest eigenvalue of a symmetric positive semidefinite matrix by power
/// iteration from the all-ones vector.
pub fn power_iteration(gram: &ArrayView2<f64>, iterations: usize) -> f64 {
    let n = gram.nrows();
    if n == 0 {
        return 0.0;
    }
    let mut v = Array1::from_elem(n, 1.0 / (n as f64).sqrt());
    let mut estimate = 0.0;
    for _ in 0..iterations {
        let w = gram.dot(&v);
        let norm = w.dot(&w).sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        estimate = v.dot(&w);
        v = w / norm;
    }
    estimate.max(v.dot(&gram.dot(&v)))
}

/// `||A||_op^2 = lambda_max(A^T A)`.
pub fn op_norm_sq_columns(a: &ArrayView2<f64>) -> f64 {
    power_iteration(&a.t().dot(a).view(), POWER_ITERATIONS)
}

/// `||S||_op^2 = lambda_max(S S^T)`.
pub fn op_norm_sq_rows(s: &ArrayView2<f64>) -> f64 {
    power_iteration(&s.dot(&s.t()).view(), POWER_ITERATIONS)
}

fn to_nalgebra(m: &ArrayView2<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[[i, j]])
}

fn from_nalgebra(m: &DMatrix<f64>) -> Array2<f64> {
    Array2::from_shape_fn((m.nrows(), m.ncols()), |(i, j)| m[(i, j)])
}

/// The `count` leading eigenvectors (largest eigenvalue first) of a
/// symmetric matrix, as columns.
pub fn leading_eigenvectors(sym: &ArrayView2<f64>, count: usize) -> Array2<f64> {
    let eig = SymmetricEigen::new(to_nalgebra(sym));
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let mut out = Array2::zeros((sym.nrows(), count));
    for (k, &idx) in order.iter().take(count).enumerate() {
        for i in 0..sym.nrows() {
            out[[i, k]] = eig.eigenvectors[(i, idx)];
        }
    }
    out
}

/// Solves `gram * out = rhs` for a symmetric positive semidefinite `gram`.
///
/// Falls back to `gram + ridge * I` with `ridge = 1e-9 * trace(gram)` when
/// the Cholesky factorization fails or the matrix is numerically singular;
/// the flag reports whether the fallback was used.
pub fn solve_gram(gram: &ArrayView2<f64>, rhs: &ArrayView2<f64>) -> (Array2<f64>, bool) {
    let n = gram.nrows();
    let g = to_nalgebra(gram);
    let b = to_nalgebra(rhs);
    let diag_max = (0..n).map(|i| gram[[i, i]]).fold(0.0f64, f64::max);
    if let Some(chol) = g.clone().cholesky() {
        let l = chol.l_dirty();
        let min_pivot = (0..n).map(|i| l[(i, i)] * l[(i, i)]).fold(f64::INFINITY, f64::min);
        if diag_max > 0.0 && min_pivot > 1e-12 * diag_max {
            return (from_nalgebra(&chol.solve(&b)), false);
        }
    }
    let trace: f64 = (0..n).map(|i| gram[[i, i]]).sum();
    let ridge = if trace > 0.0 { 1e-9 * trace } else { 1e-12 };
    let mut reg = g;
    for i in 0..n {
        reg[(i, i)] += ridge;
    }
    let solution = match reg.clone().cholesky() {
        Some(chol) => chol.solve(&b),
        None => reg
            .pseudo_inverse(1e-15)
            .map(|p| p * &b)
            .unwrap_or_else(|_| DMatrix::zeros(n, rhs.ncols())),
    };
    (from_nalgebra(&solution), true)
}

use ndarray::{Array1, Array2, ArrayView2, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::ObservationMatrix;
use crate::error::{Error, Result};

/// Entries of both factors never drop below this.
const FLOOR: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct NmfOutput {
    /// Spectra, unit-norm columns.
    pub w: Array2<f64>,
    /// Activations, carrying the column scales of `w`.
    pub h: Array2<f64>,
    /// Generalized KL divergence before the first sweep and after each one.
    pub divergence_trace: Vec<f64>,
}

/// Generalized Kullback-Leibler divergence `sum x log(x/y) - x + y`.
pub fn kl_divergence(x: &ArrayView2<f64>, y: &ArrayView2<f64>) -> f64 {
    let mut total = 0.0;
    Zip::from(x).and(y).for_each(|&xv, &yv| {
        total += if xv > 0.0 { xv * (xv / yv).ln() - xv + yv } else { yv };
    });
    total
}

/// Multiplicative KL updates from a seeded random positive start.
pub fn beta_nmf_kl(x: &ObservationMatrix, n: usize, n_iter: usize, seed: u64) -> Result<NmfOutput> {
    let xd = x.data();
    let (m, t) = xd.dim();
    if n == 0 || n > m {
        return Err(Error::InvalidParameter(format!(
            "factor count {n} must be between 1 and the channel count {m}"
        )));
    }
    let mean = xd.mean().unwrap_or(0.0);
    if mean <= 0.0 {
        return Err(Error::NoSignal("observations are identically zero".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w0 = Array2::from_shape_fn((m, n), |_| rng.random_range(0.1..1.0));
    // scale the activations so that W H starts at the data mean
    let scale = mean / (w0.sum() / m as f64 * 0.55);
    let h0 = Array2::from_shape_fn((n, t), |_| scale * rng.random_range(0.1..1.0));
    beta_nmf_kl_from(xd, w0, h0, n_iter)
}

/// Multiplicative KL updates from an explicit start.
pub fn beta_nmf_kl_from(x: &Array2<f64>, w0: Array2<f64>, h0: Array2<f64>, n_iter: usize) -> Result<NmfOutput> {
    let (m, t) = x.dim();
    let n = w0.ncols();
    if w0.nrows() != m || h0.dim() != (n, t) {
        return Err(Error::Shape(format!(
            "X is {:?}, W is {:?}, H is {:?}",
            x.dim(),
            w0.dim(),
            h0.dim()
        )));
    }
    if x.iter().any(|&v| v < 0.0) {
        return Err(Error::InvalidParameter("KL NMF needs nonnegative data".into()));
    }
    let mut w = w0.mapv(|v| v.max(FLOOR));
    let mut h = h0.mapv(|v| v.max(FLOOR));
    let mut trace = Vec::with_capacity(n_iter + 1);
    trace.push(kl_divergence(&x.view(), &w.dot(&h).view()));

    for _ in 0..n_iter {
        // H <- H * (W^T (X / WH)) / (W^T 1)
        let ratio = x / &w.dot(&h);
        let numer = w.t().dot(&ratio);
        let denom: Array1<f64> = w.sum_axis(ndarray::Axis(0));
        Zip::from(h.rows_mut())
            .and(numer.rows())
            .and(&denom)
            .for_each(|mut hr, nr, &d| {
                Zip::from(&mut hr).and(&nr).for_each(|hv, &nv| *hv = (*hv * nv / d).max(FLOOR));
            });

        // W <- W * ((X / WH) H^T) / (1 H^T)
        let ratio = x / &w.dot(&h);
        let numer = ratio.dot(&h.t());
        let denom: Array1<f64> = h.sum_axis(ndarray::Axis(1));
        Zip::from(w.rows_mut()).and(numer.rows()).for_each(|mut wr, nr| {
            Zip::from(&mut wr)
                .and(&nr)
                .and(&denom)
                .for_each(|wv, &nv, &d| *wv = (*wv * nv / d).max(FLOOR));
        });

        trace.push(kl_divergence(&x.view(), &w.dot(&h).view()));
    }

    for (j, mut column) in w.columns_mut().into_iter().enumerate() {
        let norm = column.dot(&column).sqrt();
        column.mapv_inplace(|v| v / norm);
        h.row_mut(j).mapv_inplace(|v| v * norm);
    }
    Ok(NmfOutput {
        w,
        h,
        divergence_trace: trace,
    })
}

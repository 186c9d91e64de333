//! Synthetic X-ray-like multichannel data: a shell-shaped extended
//! component with a power-law spectrum plus compact components with
//! Gaussian line spectra, mixed, scaled to a target mean flux and
//! Poisson-sampled.

use ndarray::{Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{MixingMatrix, ObservationMatrix, SourceMatrix};
use crate::error::{Error, Result};

/// Largest tolerated pairwise correlation between generated sources.
pub const MAX_SOURCE_CORRELATION: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PowerLaw {
    pub index: f64,
    /// Overall amplitude; absorbed by the unit-norm normalization.
    pub normalization: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaussianLine {
    /// Center, in channels (1-based, may be fractional).
    pub center: f64,
    /// Standard deviation, in channels.
    pub width: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationConfig {
    pub n_sources: usize,
    pub m_channels: usize,
    pub height: usize,
    pub width: usize,
    pub mean_flux: f64,
    pub power_law: PowerLaw,
    /// One line per source after the first.
    pub lines: Vec<GaussianLine>,
    pub seed: u64,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self::desk_scale(10.0, 0)
    }
}

impl SimulationConfig {
    /// Lines at 40% and 60% of the band with widths of 4% of the band.
    pub fn with_default_lines(m_channels: usize, height: usize, width: usize, mean_flux: f64, seed: u64) -> Self {
        let m = m_channels as f64;
        Self {
            n_sources: 3,
            m_channels,
            height,
            width,
            mean_flux,
            power_law: PowerLaw {
                index: 1.5,
                normalization: 1.0,
            },
            lines: vec![
                GaussianLine {
                    center: 0.4 * m,
                    width: 0.04 * m,
                },
                GaussianLine {
                    center: 0.6 * m,
                    width: 0.04 * m,
                },
            ],
            seed,
        }
    }

    /// 64x64 pixels, 20 channels, 3 sources.
    pub fn desk_scale(mean_flux: f64, seed: u64) -> Self {
        Self::with_default_lines(20, 64, 64, mean_flux, seed)
    }

    /// 128x128 pixels, 50 channels, 3 sources.
    pub fn paper_scale(mean_flux: f64, seed: u64) -> Self {
        Self::with_default_lines(50, 128, 128, mean_flux, seed)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_sources == 0 || self.m_channels == 0 || self.height == 0 || self.width == 0 {
            return Err(Error::InvalidParameter("simulation dimensions must be positive".into()));
        }
        if self.n_sources > self.m_channels {
            return Err(Error::InvalidParameter("more sources than channels".into()));
        }
        if !(self.mean_flux > 0.0 && self.mean_flux.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "mean flux must be positive, got {}",
                self.mean_flux
            )));
        }
        if self.lines.len() + 1 != self.n_sources {
            return Err(Error::InvalidParameter(format!(
                "{} sources need {} line spectra, got {}",
                self.n_sources,
                self.n_sources - 1,
                self.lines.len()
            )));
        }
        if let Some(line) = self.lines.iter().find(|l| !(l.width > 0.0)) {
            return Err(Error::InvalidParameter(format!("line width must be positive, got {}", line.width)));
        }
        if !self.power_law.index.is_finite() || !(self.power_law.normalization > 0.0) {
            return Err(Error::InvalidParameter("invalid power-law spectrum".into()));
        }
        Ok(())
    }
}

/// SplitMix64 finalizer, used to derive independent stream seeds.
pub fn mix_seed(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Combines a base seed with further components.
pub fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    parts.iter().fold(mix_seed(base), |acc, &p| mix_seed(acc ^ mix_seed(p)))
}

/// Power law in the first column, Gaussian lines in the others, every
/// column unit norm.
pub fn make_spectra(config: &SimulationConfig) -> Result<MixingMatrix> {
    config.validate()?;
    let m = config.m_channels;
    let mut a = Array2::zeros((m, config.n_sources));
    for i in 0..m {
        let channel = (i + 1) as f64;
        a[[i, 0]] = config.power_law.normalization * (channel / m as f64).powf(-config.power_law.index);
        for (j, line) in config.lines.iter().enumerate() {
            let d = channel - line.center;
            a[[i, j + 1]] = (-d * d / (2.0 * line.width * line.width)).exp();
        }
    }
    for mut column in a.columns_mut() {
        column.mapv_inplace(|v: f64| v.max(0.0));
        let norm = column.dot(&column).sqrt();
        if norm == 0.0 {
            return Err(Error::InvalidParameter("spectrum vanishes on every channel".into()));
        }
        column.mapv_inplace(|v| v / norm);
    }
    MixingMatrix::new(a)
}

/// Pearson correlation of two equally sized images.
pub fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut cov, mut va, mut vb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    if va == 0.0 || vb == 0.0 {
        0.0
    } else {
        cov / (va * vb).sqrt()
    }
}

fn max_pairwise_correlation(s: &Array2<f64>) -> f64 {
    let rows: Vec<Vec<f64>> = s.axis_iter(Axis(0)).map(|r| r.to_vec()).collect();
    let mut worst = f64::NEG_INFINITY;
    for i in 0..rows.len() {
        for j in i + 1..rows.len() {
            worst = worst.max(correlation(&rows[i], &rows[j]).abs());
        }
    }
    worst
}

fn shell_image(height: usize, width: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let size = height.min(width) as f64;
    let cy = height as f64 / 2.0 + rng.random_range(-0.05..0.05) * size;
    let cx = width as f64 / 2.0 + rng.random_range(-0.05..0.05) * size;
    let rings: Vec<(f64, f64, f64)> = (0..3)
        .map(|_| {
            (
                rng.random_range(0.22..0.36) * size,
                rng.random_range(0.015..0.035) * size,
                rng.random_range(0.5..1.0),
            )
        })
        .collect();
    // angular modulation gives the shell a filamentary, knotty look
    let lobes = rng.random_range(3..7) as f64;
    let phase = rng.random_range(0.0..std::f64::consts::TAU);
    Array2::from_shape_fn((height, width), |(y, x)| {
        let dy = y as f64 + 0.5 - cy;
        let dx = x as f64 + 0.5 - cx;
        let rho = (dy * dy + dx * dx).sqrt();
        let theta = dy.atan2(dx);
        let modulation = 0.6 + 0.4 * (lobes * theta + phase).cos();
        rings
            .iter()
            .map(|&(r, w, amp)| amp * (-(rho - r) * (rho - r) / (2.0 * w * w)).exp())
            .sum::<f64>()
            * modulation
    })
}

fn blob_image(height: usize, width: usize, centers: &[(f64, f64, f64, f64)]) -> Array2<f64> {
    Array2::from_shape_fn((height, width), |(y, x)| {
        centers
            .iter()
            .map(|&(cy, cx, w, amp)| {
                let dy = y as f64 + 0.5 - cy;
                let dx = x as f64 + 0.5 - cx;
                amp * (-(dy * dy + dx * dx) / (2.0 * w * w)).exp()
            })
            .sum()
    })
}

/// Shell-shaped extended component followed by compact blob components at
/// distinct locations. Each source has unit mean intensity.
pub fn make_sources(config: &SimulationConfig) -> Result<SourceMatrix> {
    config.validate()?;
    let (height, width) = (config.height, config.width);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, &[0x5eed_0001]));
    let size = height.min(width) as f64;
    let blobs_per_source = 6;
    let min_separation = 0.12 * size;

    for _attempt in 0..64 {
        let mut s = Array2::zeros((config.n_sources, height * width));
        let shell = shell_image(height, width, &mut rng);
        s.row_mut(0).assign(&shell.into_shape_with_order(height * width).expect("contiguous"));

        let mut placed: Vec<(f64, f64)> = Vec::new();
        for i in 1..config.n_sources {
            let mut centers = Vec::with_capacity(blobs_per_source);
            let mut tries = 0;
            while centers.len() < blobs_per_source && tries < 10_000 {
                tries += 1;
                let cy = rng.random_range(0.1..0.9) * height as f64;
                let cx = rng.random_range(0.1..0.9) * width as f64;
                if placed
                    .iter()
                    .any(|&(py, px)| ((py - cy).powi(2) + (px - cx).powi(2)).sqrt() < min_separation)
                {
                    continue;
                }
                placed.push((cy, cx));
                let w = rng.random_range(0.015..0.04) * size;
                let amp = rng.random_range(0.4..1.0);
                centers.push((cy, cx, w.max(0.75), amp));
            }
            let img = blob_image(height, width, &centers);
            s.row_mut(i).assign(&img.into_shape_with_order(height * width).expect("contiguous"));
        }

        for mut row in s.rows_mut() {
            let mean = row.mean().unwrap_or(0.0);
            if mean > 0.0 {
                row.mapv_inplace(|v| v / mean);
            }
        }
        if config.n_sources == 1 || max_pairwise_correlation(&s) < MAX_SOURCE_CORRELATION {
            return SourceMatrix::new(s, height, width);
        }
    }
    Err(Error::InvalidParameter(
        "could not place decorrelated sources; image too small".into(),
    ))
}

/// Scales the sources so that the mean of `A (c S)` equals `mean_flux`.
/// Returns the scaled sources and `c`.
pub fn scale_to_flux(a: &MixingMatrix, s: &SourceMatrix, mean_flux: f64) -> Result<(SourceMatrix, f64)> {
    if !(mean_flux > 0.0 && mean_flux.is_finite()) {
        return Err(Error::InvalidParameter(format!("mean flux must be positive, got {mean_flux}")));
    }
    let current = a.data().dot(s.data()).mean().unwrap_or(0.0);
    if current <= 0.0 {
        return Err(Error::NoSignal("mixture is identically zero".into()));
    }
    let c = mean_flux / current;
    let scaled = SourceMatrix::new(s.data() * c, s.height(), s.width())?;
    Ok((scaled, c))
}

fn log_gamma(x: f64) -> f64 {
    const COEFFS: [f64; 10] = [
        8.333333333333333e-02,
        -2.777777777777778e-03,
        7.936507936507937e-04,
        -5.952380952380952e-04,
        8.417508417508418e-04,
        -1.917526917526918e-03,
        6.410256410256410e-03,
        -2.955065359477124e-02,
        1.796443723688307e-01,
        -1.39243221690590e+00,
    ];
    if x == 1.0 || x == 2.0 {
        return 0.0;
    }
    let mut x0 = x;
    let mut shift = 0;
    if x <= 7.0 {
        shift = (7.0 - x) as usize;
        x0 = x + shift as f64;
    }
    let x2 = 1.0 / (x0 * x0);
    let mut series = COEFFS[9];
    for &c in COEFFS[..9].iter().rev() {
        series = series * x2 + c;
    }
    let mut gl = series / x0 + 0.5 * std::f64::consts::TAU.ln() + (x0 - 0.5) * x0.ln() - x0;
    for _ in 0..shift {
        x0 -= 1.0;
        gl -= x0.ln();
    }
    gl
}

/// Below this intensity Poisson draws use sequential inversion.
pub const INVERSION_LIMIT: f64 = 10.0;

/// One Poisson draw. Sequential-search inversion for small means,
/// Hörmann's transformed rejection with squeeze (PTRS) otherwise.
pub fn poisson_draw<R: Rng + ?Sized>(lambda: f64, rng: &mut R) -> u64 {
    if lambda <= 0.0 {
        return 0;
    }
    if lambda < INVERSION_LIMIT {
        let mut p = (-lambda).exp();
        let mut cdf = p;
        let u: f64 = rng.random();
        let mut k = 0u64;
        while u > cdf {
            k += 1;
            p *= lambda / k as f64;
            cdf += p;
            if p == 0.0 && cdf < u {
                // rounding left a gap in the tail
                break;
            }
        }
        return k;
    }
    let slam = lambda.sqrt();
    let loglam = lambda.ln();
    let b = 0.931 + 2.53 * slam;
    let a = -0.059 + 0.02483 * b;
    let inv_alpha = 1.1239 + 1.1328 / (b - 3.4);
    let vr = 0.9277 - 3.6224 / (b - 2.0);
    loop {
        let u: f64 = rng.random::<f64>() - 0.5;
        let v: f64 = rng.random();
        let us = 0.5 - u.abs();
        let k = ((2.0 * a / us + b) * u + lambda + 0.43).floor();
        if us >= 0.07 && v <= vr {
            return k as u64;
        }
        if k < 0.0 || (us < 0.013 && v > us) {
            continue;
        }
        if v.ln() + inv_alpha.ln() - (a / (us * us) + b).ln() <= -lambda + k * loglam - log_gamma(k + 1.0) {
            return k as u64;
        }
    }
}

/// Independent Poisson draws for every entry. Row `i` uses its own stream
/// derived from `(seed, i)`.
pub fn poisson_sample(intensity: &ArrayView2<f64>, height: usize, width: usize, seed: u64) -> Result<ObservationMatrix> {
    for ((row, col), &v) in intensity.indexed_iter() {
        if !v.is_finite() {
            return Err(Error::NonFiniteEntry { row, col });
        }
        if v < 0.0 {
            return Err(Error::NegativeEntry { row, col, value: v });
        }
    }
    let mut out = Array2::zeros(intensity.dim());
    for (i, (src, mut dst)) in intensity.rows().into_iter().zip(out.rows_mut()).enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[i as u64]));
        for (d, &lam) in dst.iter_mut().zip(src.iter()) {
            *d = poisson_draw(lam, &mut rng) as f64;
        }
    }
    ObservationMatrix::new(out, height, width)
}

/// Ground truth plus one noisy observation.
#[derive(Debug, Clone)]
pub struct Simulation {
    pub mixing: MixingMatrix,
    /// Sources already scaled to the requested mean flux.
    pub sources: SourceMatrix,
    pub observations: ObservationMatrix,
    pub flux_scale: f64,
}

/// Builds the flux-scaled ground truth of `config`.
pub fn ground_truth(config: &SimulationConfig) -> Result<(MixingMatrix, SourceMatrix, f64)> {
    let a = make_spectra(config)?;
    let s = make_sources(config)?;
    let (s, c) = scale_to_flux(&a, &s, config.mean_flux)?;
    Ok((a, s, c))
}

/// Ground truth from `config`, Poisson noise from `noise_seed`.
pub fn simulate_with_noise_seed(config: &SimulationConfig, noise_seed: u64) -> Result<Simulation> {
    let (mixing, sources, flux_scale) = ground_truth(config)?;
    let intensity = mixing.data().dot(sources.data());
    let observations = poisson_sample(&intensity.view(), config.height, config.width, noise_seed)?;
    Ok(Simulation {
        mixing,
        sources,
        observations,
        flux_scale,
    })
}

/// Full simulation, noise seeded from `config.seed`.
pub fn simulate(config: &SimulationConfig) -> Result<Simulation> {
    simulate_with_noise_seed(config, derive_seed(config.seed, &[0x0b5e_4e5e]))
}

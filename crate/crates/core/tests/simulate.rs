use ndarray::Array2;
use pgmca::simulate::{
    correlation, make_sources, make_spectra, poisson_draw, poisson_sample, scale_to_flux, simulate, GaussianLine,
    SimulationConfig, MAX_SOURCE_CORRELATION,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn moments(draws: &[f64]) -> (f64, f64) {
    let n = draws.len() as f64;
    let mean = draws.iter().sum::<f64>() / n;
    let var = draws.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

#[test]
fn spectra_have_unit_columns_and_peaks_at_line_centers() {
    let config = SimulationConfig::desk_scale(10.0, 0);
    let a = make_spectra(&config).unwrap();
    for col in a.data().columns() {
        assert!((col.dot(&col).sqrt() - 1.0).abs() < 1e-12);
        assert!(col.iter().all(|&v| v >= 0.0));
    }
    for (j, line) in config.lines.iter().enumerate() {
        let col = a.data().column(j + 1);
        let peak = (0..col.len()).max_by(|&p, &q| col[p].total_cmp(&col[q])).unwrap();
        // channels are 1-based
        assert_eq!(peak + 1, line.center.round() as usize);
    }
    let power_law = a.data().column(0);
    assert!(power_law.windows(2).into_iter().all(|w| w[1] < w[0]));
}

#[test]
fn flat_power_law() {
    let mut config = SimulationConfig::desk_scale(10.0, 0);
    config.power_law.index = 0.0;
    let a = make_spectra(&config).unwrap();
    let expected = 1.0 / (config.m_channels as f64).sqrt();
    assert!(a.data().column(0).iter().all(|&v| (v - expected).abs() < 1e-12));
}

#[test]
fn degenerate_line_width_is_rejected() {
    let mut config = SimulationConfig::desk_scale(10.0, 0);
    config.lines[1] = GaussianLine { center: 5.0, width: 0.0 };
    assert!(make_spectra(&config).is_err());
}

#[test]
fn sources_are_nonnegative_deterministic_and_decorrelated() {
    for seed in 0..10 {
        let config = SimulationConfig::desk_scale(10.0, seed);
        let s = make_sources(&config).unwrap();
        assert!(s.data().iter().all(|&v| v >= 0.0));
        let again = make_sources(&config).unwrap();
        assert_eq!(s.data(), again.data());
        let rows: Vec<Vec<f64>> = s.data().rows().into_iter().map(|r| r.to_vec()).collect();
        for i in 0..rows.len() {
            for j in i + 1..rows.len() {
                let c = correlation(&rows[i], &rows[j]).abs();
                assert!(c < MAX_SOURCE_CORRELATION, "seed {seed}: corr({i},{j}) = {c}");
            }
        }
    }
}

#[test]
fn flux_scaling_is_exact_and_linear() {
    let config = SimulationConfig::desk_scale(1.0, 3);
    let a = make_spectra(&config).unwrap();
    let s = make_sources(&config).unwrap();
    let (scaled, c) = scale_to_flux(&a, &s, 7.0).unwrap();
    let mean = a.data().dot(scaled.data()).mean().unwrap();
    assert!((mean - 7.0).abs() < 1e-12);
    let (_, c2) = scale_to_flux(&a, &s, 14.0).unwrap();
    assert!((c2 / c - 2.0).abs() < 1e-12);
    let (again, unit) = scale_to_flux(&a, &scaled, 7.0).unwrap();
    assert!((unit - 1.0).abs() < 1e-12);
    assert!(again.data().iter().zip(scaled.data()).all(|(x, y)| (x - y).abs() <= 1e-12 * y.abs()));
    assert!(scale_to_flux(&a, &s, 0.0).is_err());
}

#[test]
fn small_mean_moments() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let draws: Vec<f64> = (0..1_000_000).map(|_| poisson_draw(4.0, &mut rng) as f64).collect();
    let (mean, var) = moments(&draws);
    assert!((mean - 4.0).abs() < 0.01, "mean {mean}");
    assert!((var - 4.0).abs() < 0.05, "variance {var}");
}

#[test]
fn large_mean_moments() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for lambda in [10.0, 37.5, 1000.0] {
        let draws: Vec<f64> = (0..400_000).map(|_| poisson_draw(lambda, &mut rng) as f64).collect();
        let (mean, var) = moments(&draws);
        let n = draws.len() as f64;
        // five standard errors on the mean and on the variance
        assert!((mean - lambda).abs() < 5.0 * (lambda / n).sqrt(), "lambda {lambda}: mean {mean}");
        let var_se = (lambda * (1.0 + 2.0 * lambda) / n).sqrt();
        assert!((var - lambda).abs() < 5.0 * var_se, "lambda {lambda}: variance {var}");
    }
}

#[test]
fn chi_square_goodness_of_fit() {
    let lambda = 2.5f64;
    let n = 100_000;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    // bins 0..=7 and a tail bin for 8 and above
    let mut observed = [0usize; 9];
    for _ in 0..n {
        let k = poisson_draw(lambda, &mut rng) as usize;
        observed[k.min(8)] += 1;
    }
    let mut pmf = [0.0f64; 9];
    let mut p = (-lambda).exp();
    for (k, slot) in pmf.iter_mut().enumerate().take(8) {
        *slot = p;
        p *= lambda / (k + 1) as f64;
    }
    pmf[8] = 1.0 - pmf[..8].iter().sum::<f64>();
    let stat: f64 = observed
        .iter()
        .zip(&pmf)
        .map(|(&o, &q)| {
            let e = q * n as f64;
            (o as f64 - e).powi(2) / e
        })
        .sum();
    // upper 0.001 quantile of chi-square with 8 degrees of freedom
    assert!(stat < 26.124, "chi-square statistic {stat}");
}

#[test]
fn sampling_is_seed_deterministic_and_row_independent() {
    let intensity = Array2::from_shape_fn((3, 64), |(i, t)| 0.5 + (i * 7 + t) as f64 % 13.0);
    let a = poisson_sample(&intensity.view(), 8, 8, 9).unwrap();
    let b = poisson_sample(&intensity.view(), 8, 8, 9).unwrap();
    let c = poisson_sample(&intensity.view(), 8, 8, 10).unwrap();
    assert_eq!(a.data(), b.data());
    assert_ne!(a.data(), c.data());
    let first_row = poisson_sample(&intensity.slice(ndarray::s![..1, ..]), 8, 8, 9).unwrap();
    assert_eq!(first_row.data().row(0), a.data().row(0));
}

#[test]
fn channel_means_follow_the_intensity() {
    let config = SimulationConfig::desk_scale(10.0, 4);
    let sim = simulate(&config).unwrap();
    let intensity = sim.mixing.data().dot(sim.sources.data());
    let t = intensity.ncols() as f64;
    for (obs, lam) in sim.observations.data().rows().into_iter().zip(intensity.rows()) {
        let expected = lam.mean().unwrap();
        let got = obs.mean().unwrap();
        assert!((got - expected).abs() < 5.0 * (expected / t).sqrt() + 1e-12, "{got} vs {expected}");
    }
    let mean = sim.observations.data().mean().unwrap();
    let bound = 3.0 * (10.0 / (config.m_channels as f64 * t)).sqrt();
    assert!((mean - 10.0).abs() < bound);
}

#[test]
fn full_pipeline_is_deterministic() {
    let config = SimulationConfig::desk_scale(2.0, 6);
    let first = simulate(&config).unwrap();
    let second = simulate(&config).unwrap();
    assert_eq!(first.observations.data(), second.observations.data());
    assert_eq!(first.mixing.data(), second.mixing.data());
}

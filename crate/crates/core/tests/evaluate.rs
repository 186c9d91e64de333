use ndarray::{Array1, Array2};
use pgmca::data::ObservationMatrix;
use pgmca::evaluate::{
    beta_nmf_kl, beta_nmf_kl_from, kl_divergence, run_flux_sweep, sad, sad_vs_flux_svg, sad_with_matching, Method,
    SweepSpec,
};
use pgmca::gmca::gmca_run;
use pgmca::pgmca::PgmcaSettings;
use pgmca::simulate::{derive_seed, simulate_with_noise_seed, SimulationConfig};
use pgmca::solvers::SolverSettings;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for slot in 0..=p.len() {
            let mut q = p.clone();
            q.insert(slot, n - 1);
            out.push(q);
        }
    }
    out
}

fn brute_force_sad(est: &Array2<f64>, truth: &Array2<f64>) -> f64 {
    let n = truth.ncols();
    let angle = |j: usize, k: usize| {
        let a = est.column(j);
        let b = truth.column(k);
        let c = a.dot(&b) / (a.dot(&a).sqrt() * b.dot(&b).sqrt());
        c.abs().min(1.0).acos()
    };
    permutations(n)
        .into_iter()
        .map(|p| p.iter().enumerate().map(|(k, &j)| angle(j, k)).sum::<f64>() / n as f64)
        .fold(f64::INFINITY, f64::min)
}

#[test]
fn sad_matches_permutation_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for trial in 0..40 {
        let n = 1 + trial % 4;
        let est = Array2::from_shape_fn((6, n), |_| rng.random_range(0.0..1.0));
        let truth = Array2::from_shape_fn((6, n), |_| rng.random_range(0.0..1.0));
        let got = sad(&est.view(), &truth.view()).unwrap();
        let expected = brute_force_sad(&est, &truth);
        assert!((got - expected).abs() < 1e-12, "trial {trial}: {got} vs {expected}");
    }
}

#[test]
fn sad_is_permutation_and_sign_invariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let truth = Array2::from_shape_fn((7, 4), |_| rng.random_range(0.0..1.0));
    let order = [2usize, 0, 3, 1];
    let signs = [1.0, -1.0, -1.0, 1.0];
    let mut est = Array2::zeros((7, 4));
    for (j, (&src, &sign)) in order.iter().zip(&signs).enumerate() {
        est.column_mut(j).assign(&(&truth.column(src) * sign * 3.0));
    }
    let (value, matching) = sad_with_matching(&est.view(), &truth.view()).unwrap();
    assert!(value < 1e-14, "{value}");
    assert_eq!(matching, order.to_vec());
    let orthogonal = Array2::from_shape_fn((4, 2), |(i, j)| if i == j { 1.0 } else { 0.0 });
    let swapped = Array2::from_shape_fn((4, 2), |(i, j)| if i == 1 - j { 1.0 } else { 0.0 });
    let v = sad(&orthogonal.view(), &swapped.view()).unwrap();
    assert!(v < 1e-12);
    let far = Array2::from_shape_fn((4, 2), |(i, j)| if i == j + 2 { 1.0 } else { 0.0 });
    let v = sad(&far.view(), &orthogonal.view()).unwrap();
    assert!((v - std::f64::consts::FRAC_PI_2).abs() < 1e-12);
}

#[test]
fn sad_rejects_mismatched_shapes() {
    let a = Array2::<f64>::ones((4, 2));
    let b = Array2::<f64>::ones((4, 3));
    assert!(sad(&a.view(), &b.view()).is_err());
}

#[test]
fn nmf_exact_factorization_is_a_fixed_point() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let w = Array2::from_shape_fn((5, 2), |_| rng.random_range(0.1..1.0));
    let h = Array2::from_shape_fn((2, 30), |_| rng.random_range(0.1..4.0));
    let x = w.dot(&h);
    let out = beta_nmf_kl_from(&x, w.clone(), h.clone(), 5).unwrap();
    assert!(out.divergence_trace.iter().all(|&d| d.abs() < 1e-9));
    let reconstructed = out.w.dot(&out.h);
    assert!(reconstructed.iter().zip(&x).all(|(r, v)| (r - v).abs() < 1e-9 * v.max(1.0)));
}

#[test]
fn nmf_divergence_is_nonincreasing() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..5 {
        let x = Array2::from_shape_fn((6, 40), |_| rng.random_range(0..8) as f64);
        let w0 = Array2::from_shape_fn((6, 3), |_| rng.random_range(0.1..1.0));
        let h0 = Array2::from_shape_fn((3, 40), |_| rng.random_range(0.1..1.0));
        let out = beta_nmf_kl_from(&x, w0, h0, 200).unwrap();
        for w in out.divergence_trace.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-12) + 1e-12, "{} -> {}", w[0], w[1]);
        }
        assert!((kl_divergence(&x.view(), &out.w.dot(&out.h).view()) - out.divergence_trace.last().unwrap()).abs() < 1e-6);
    }
}

#[test]
fn nmf_recovers_a_rank_one_factorization() {
    let w: Array1<f64> = Array1::from(vec![0.1, 0.6, 0.3, 0.7, 0.2]);
    let w = &w / w.dot(&w).sqrt();
    let h = Array1::from_shape_fn(64, |t| 1.0 + (t % 9) as f64);
    let x = Array2::from_shape_fn((5, 64), |(i, t)| w[i] * h[t]);
    let out = beta_nmf_kl(&ObservationMatrix::new(x, 8, 8).unwrap(), 1, 300, 5).unwrap();
    let truth = w.insert_axis(ndarray::Axis(1));
    let err = sad(&out.w.view(), &truth.view()).unwrap();
    assert!(err < 1e-3, "SAD {err}");
}

#[test]
fn nmf_rejects_bad_inputs() {
    let zero = ObservationMatrix::new(Array2::zeros((3, 16)), 4, 4).unwrap();
    assert!(beta_nmf_kl(&zero, 2, 10, 0).is_err());
    let x = ObservationMatrix::new(Array2::ones((3, 16)), 4, 4).unwrap();
    assert!(beta_nmf_kl(&x, 4, 10, 0).is_err());
    assert!(beta_nmf_kl_from(&Array2::ones((3, 4)), Array2::ones((2, 1)), Array2::ones((1, 4)), 3).is_err());
}

fn tiny_spec() -> SweepSpec {
    SweepSpec {
        simulation: SimulationConfig::with_default_lines(8, 16, 16, 1.0, 3),
        fluxes: vec![2.0, 20.0],
        methods: vec![Method::Gmca, Method::Pgmca, Method::BetaNmf],
        n_mc: 2,
        seed: 17,
        pgmca: PgmcaSettings {
            max_outer_iter: 8,
            s_step: SolverSettings::new(40, 1e-6).unwrap(),
            a_step: SolverSettings::new(40, 1e-6).unwrap(),
            ..Default::default()
        },
        nmf_iter: 50,
    }
}

#[test]
fn degenerate_sweep_equals_direct_composition() {
    let spec = SweepSpec {
        fluxes: vec![5.0],
        methods: vec![Method::Gmca],
        n_mc: 1,
        ..tiny_spec()
    };
    let result = run_flux_sweep(&spec, 1).unwrap();
    assert_eq!(result.cells.len(), 1);

    let mut config = spec.simulation.clone();
    config.mean_flux = 5.0;
    let sim = simulate_with_noise_seed(&config, derive_seed(spec.seed, &[5.0f64.to_bits(), 0])).unwrap();
    let mut gmca = spec.pgmca.gmca;
    gmca.seed = derive_seed(spec.seed, &[5.0f64.to_bits(), 0, 1]);
    let out = gmca_run(&sim.observations, 3, &gmca).unwrap();
    let expected = sad(&out.mixing.data().view(), &sim.mixing.data().view()).unwrap();
    assert_eq!(result.cells[0].sad, Some(expected));
    assert_eq!(result.mean_sad(Method::Gmca, 5.0), Some(expected));
    assert_eq!(result.summary_for(Method::Gmca, 5.0).unwrap().std_sad, Some(0.0));
}

#[test]
fn sweep_is_deterministic_and_independent_of_jobs() {
    let spec = tiny_spec();
    let first = run_flux_sweep(&spec, 1).unwrap();
    let second = run_flux_sweep(&spec, 3).unwrap();
    assert_eq!(first, second);
    assert_eq!(first.to_csv(), second.to_csv());
    assert_eq!(sad_vs_flux_svg(&first), sad_vs_flux_svg(&second));
}

#[test]
fn flux_order_does_not_change_cells() {
    let spec = tiny_spec();
    let reversed = SweepSpec {
        fluxes: vec![20.0, 2.0],
        ..tiny_spec()
    };
    let a = run_flux_sweep(&spec, 2).unwrap();
    let b = run_flux_sweep(&reversed, 2).unwrap();
    for flux in [2.0, 20.0] {
        for method in [Method::Gmca, Method::Pgmca, Method::BetaNmf] {
            assert_eq!(
                a.summary_for(method, flux).unwrap().sads,
                b.summary_for(method, flux).unwrap().sads
            );
        }
    }
}

#[test]
fn csv_and_summary_agree() {
    let result = run_flux_sweep(&tiny_spec(), 2).unwrap();
    let csv = result.to_csv();
    let mut lines = csv.split("\r\n").filter(|l| !l.is_empty());
    assert_eq!(lines.next(), Some("method,flux,replicate,sad,failed"));
    let rows: Vec<Vec<String>> = lines.map(|l| l.split(',').map(String::from).collect()).collect();
    assert_eq!(rows.len(), 2 * 2 * 3);
    for summary in &result.summary {
        let sads: Vec<f64> = rows
            .iter()
            .filter(|r| r[0] == summary.method.name() && r[1].parse::<f64>().unwrap() == summary.flux)
            .map(|r| r[3].parse::<f64>().unwrap())
            .collect();
        assert_eq!(sads.len(), 2);
        let mean = sads.iter().sum::<f64>() / 2.0;
        assert!((summary.mean_sad.unwrap() - mean).abs() < 1e-15);
        let std = ((sads[0] - mean).powi(2) + (sads[1] - mean).powi(2)).sqrt();
        assert!((summary.std_sad.unwrap() - std).abs() < 1e-15);
        assert!(sads.iter().all(|&s| (0.0..=std::f64::consts::FRAC_PI_2).contains(&s)));
    }
}

#[test]
fn svg_has_one_polyline_per_method() {
    let result = run_flux_sweep(
        &SweepSpec {
            n_mc: 1,
            ..tiny_spec()
        },
        1,
    )
    .unwrap();
    let svg = sad_vs_flux_svg(&result);
    assert!(svg.starts_with("<svg") || svg.starts_with("<?xml"));
    assert_eq!(svg.matches("<polyline").count(), 3);
    for method in ["gmca", "pgmca", "beta-nmf"] {
        assert!(svg.contains(method));
    }
}

#[test]
fn invalid_sweeps_are_rejected() {
    for spec in [
        SweepSpec { n_mc: 0, ..tiny_spec() },
        SweepSpec { fluxes: vec![], ..tiny_spec() },
        SweepSpec { fluxes: vec![1.0, -2.0], ..tiny_spec() },
        SweepSpec { fluxes: vec![3.0, 3.0], ..tiny_spec() },
        SweepSpec { methods: vec![Method::Gmca, Method::Gmca], ..tiny_spec() },
    ] {
        assert!(run_flux_sweep(&spec, 1).is_err());
    }
    assert_eq!("beta-nmf".parse::<Method>().unwrap(), Method::BetaNmf);
    assert!("ica".parse::<Method>().is_err());
}

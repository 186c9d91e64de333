use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::nmf::beta_nmf_kl;
use super::sad::sad;
use crate::error::{Error, Result};
use crate::gmca::gmca_run;
use crate::pgmca::{pgmca_run_from, PgmcaSettings};
use crate::simulate::{derive_seed, simulate_with_noise_seed, SimulationConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Gmca,
    Pgmca,
    BetaNmf,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Gmca => "gmca",
            Method::Pgmca => "pgmca",
            Method::BetaNmf => "beta-nmf",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gmca" => Ok(Method::Gmca),
            "pgmca" => Ok(Method::Pgmca),
            "beta-nmf" => Ok(Method::BetaNmf),
            other => Err(Error::InvalidParameter(format!("unknown method {other:?}"))),
        }
    }
}

/// Monte-Carlo flux sweep description. The ground truth comes from
/// `simulation` (its `mean_flux` is replaced by each swept value); every
/// replicate draws fresh Poisson noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSpec {
    pub simulation: SimulationConfig,
    pub fluxes: Vec<f64>,
    pub methods: Vec<Method>,
    pub n_mc: usize,
    pub seed: u64,
    /// Settings of the Poisson solver; its `gmca` block also configures the
    /// GMCA baseline.
    pub pgmca: PgmcaSettings,
    pub nmf_iter: usize,
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self {
            simulation: SimulationConfig::default(),
            fluxes: vec![0.5, 2.0, 10.0, 35.0],
            methods: vec![Method::Gmca, Method::Pgmca, Method::BetaNmf],
            n_mc: 3,
            seed: 0,
            pgmca: PgmcaSettings::default(),
            nmf_iter: 500,
        }
    }
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_mc == 0 {
            return Err(Error::InvalidParameter("n_mc must be at least 1".into()));
        }
        if self.fluxes.is_empty() || self.methods.is_empty() {
            return Err(Error::InvalidParameter("sweep needs fluxes and methods".into()));
        }
        if let Some(f) = self.fluxes.iter().find(|f| !(**f > 0.0 && f.is_finite())) {
            return Err(Error::InvalidParameter(format!("invalid flux {f}")));
        }
        let mut seen = self.methods.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.methods.len() {
            return Err(Error::InvalidParameter("duplicate method in sweep".into()));
        }
        let mut flux_bits: Vec<u64> = self.fluxes.iter().map(|f| f.to_bits()).collect();
        flux_bits.sort();
        flux_bits.dedup();
        if flux_bits.len() != self.fluxes.len() {
            return Err(Error::InvalidParameter("duplicate flux in sweep".into()));
        }
        let mut sim = self.simulation.clone();
        sim.mean_flux = self.fluxes[0];
        sim.validate()?;
        self.pgmca.validate()
    }

    fn noise_seed(&self, flux: f64, replicate: usize) -> u64 {
        derive_seed(self.seed, &[flux.to_bits(), replicate as u64])
    }

    fn method_seed(&self, flux: f64, replicate: usize, method: Method) -> u64 {
        derive_seed(self.seed, &[flux.to_bits(), replicate as u64, 1 + method as u64])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellResult {
    pub method: Method,
    pub flux: f64,
    pub replicate: usize,
    /// `None` when the run failed.
    pub sad: Option<f64>,
    pub failed: bool,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodSummary {
    pub method: Method,
    pub flux: f64,
    /// Mean over successful runs, `None` if every run failed.
    pub mean_sad: Option<f64>,
    /// Sample standard deviation over successful runs (0 for one run).
    pub std_sad: Option<f64>,
    pub sads: Vec<f64>,
    pub failed_runs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepResult {
    pub fluxes: Vec<f64>,
    pub methods: Vec<Method>,
    pub runs: usize,
    pub cells: Vec<CellResult>,
    pub summary: Vec<MethodSummary>,
}

impl SweepResult {
    pub fn summary_for(&self, method: Method, flux: f64) -> Option<&MethodSummary> {
        self.summary
            .iter()
            .find(|s| s.method == method && s.flux.to_bits() == flux.to_bits())
    }

    pub fn mean_sad(&self, method: Method, flux: f64) -> Option<f64> {
        self.summary_for(method, flux).and_then(|s| s.mean_sad)
    }

    /// RFC-4180 CSV with header `method,flux,replicate,sad,failed`; the
    /// `sad` field is empty for failed runs.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("method,flux,replicate,sad,failed\r\n");
        for cell in &self.cells {
            let sad = cell.sad.map(|v| v.to_string()).unwrap_or_default();
            let _ = write!(
                out,
                "{},{},{},{},{}\r\n",
                cell.method, cell.flux, cell.replicate, sad, cell.failed
            );
        }
        out
    }
}

fn summarize(methods: &[Method], fluxes: &[f64], cells: &[CellResult]) -> Vec<MethodSummary> {
    let mut summary = Vec::new();
    for &flux in fluxes {
        for &method in methods {
            let matching: Vec<&CellResult> = cells
                .iter()
                .filter(|c| c.method == method && c.flux.to_bits() == flux.to_bits())
                .collect();
            let sads: Vec<f64> = matching.iter().filter_map(|c| c.sad).collect();
            let failed_runs = matching.iter().filter(|c| c.failed).count();
            let (mean_sad, std_sad) = if sads.is_empty() {
                (None, None)
            } else {
                let n = sads.len() as f64;
                let mean = sads.iter().sum::<f64>() / n;
                let std = if sads.len() > 1 {
                    (sads.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt()
                } else {
                    0.0
                };
                (Some(mean), Some(std))
            };
            summary.push(MethodSummary {
                method,
                flux,
                mean_sad,
                std_sad,
                sads,
                failed_runs,
            });
        }
    }
    summary
}

fn run_replicate(spec: &SweepSpec, flux: f64, replicate: usize) -> Vec<CellResult> {
    let failed = |method: Method, error: &Error| CellResult {
        method,
        flux,
        replicate,
        sad: None,
        failed: true,
        error: Some(error.to_string()),
    };
    let mut config = spec.simulation.clone();
    config.mean_flux = flux;
    let sim = match simulate_with_noise_seed(&config, spec.noise_seed(flux, replicate)) {
        Ok(sim) => sim,
        Err(e) => return spec.methods.iter().map(|&m| failed(m, &e)).collect(),
    };
    let n = config.n_sources;
    let truth = sim.mixing.data().view();

    // the GMCA baseline doubles as the Poisson solver's starting point
    let needs_gmca = spec.methods.iter().any(|m| matches!(m, Method::Gmca | Method::Pgmca));
    let gmca = needs_gmca.then(|| {
        let mut settings = spec.pgmca.gmca;
        settings.seed = spec.method_seed(flux, replicate, Method::Gmca);
        if settings.scales.is_none() {
            settings.scales = spec.pgmca.scales;
        }
        gmca_run(&sim.observations, n, &settings)
    });

    spec.methods
        .iter()
        .map(|&method| {
            let estimate: Result<ndarray::Array2<f64>> = match method {
                Method::Gmca => match gmca.as_ref().expect("gmca requested") {
                    Ok(out) => Ok(out.mixing.data().clone()),
                    Err(e) => Err(Error::SolverAbort(e.to_string())),
                },
                Method::Pgmca => match gmca.as_ref().expect("gmca requested") {
                    Ok(init) => pgmca_run_from(&sim.observations, init.mixing.data(), init.sources.data(), &spec.pgmca)
                        .map(|r| r.final_a)
                        .map_err(|f| f.error),
                    Err(e) => Err(Error::SolverAbort(format!("initialization failed: {e}"))),
                },
                Method::BetaNmf => beta_nmf_kl(
                    &sim.observations,
                    n,
                    spec.nmf_iter,
                    spec.method_seed(flux, replicate, Method::BetaNmf),
                )
                .map(|out| out.w),
            };
            match estimate.and_then(|a| sad(&a.view(), &truth)) {
                Ok(value) => CellResult {
                    method,
                    flux,
                    replicate,
                    sad: Some(value),
                    failed: false,
                    error: None,
                },
                Err(e) => failed(method, &e),
            }
        })
        .collect()
}

/// Runs every method on every (flux, replicate) pair, `jobs` pairs at a
/// time. Results are ordered by flux (as listed), replicate, then method
/// (as listed), independently of `jobs`.
pub fn run_flux_sweep(spec: &SweepSpec, jobs: usize) -> Result<SweepResult> {
    spec.validate()?;
    let tasks: Vec<(f64, usize)> = spec
        .fluxes
        .iter()
        .flat_map(|&f| (0..spec.n_mc).map(move |r| (f, r)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::InvalidParameter(format!("thread pool: {e}")))?;
    let cells: Vec<CellResult> = pool.install(|| {
        tasks
            .par_iter()
            .map(|&(flux, rep)| run_replicate(spec, flux, rep))
            .collect::<Vec<_>>()
            .into_iter()
            .flatten()
            .collect()
    });
    let summary = summarize(&spec.methods, &spec.fluxes, &cells);
    Ok(SweepResult {
        fluxes: spec.fluxes.clone(),
        methods: spec.methods.clone(),
        runs: spec.n_mc,
        cells,
        summary,
    })
}

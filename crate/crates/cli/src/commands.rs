use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use pgmca::data::{
    read_matrix, read_mixing, read_observations, write_atomic, write_mixing, write_observations, write_sources,
    MatrixRole, MixingMatrix, ObservationMatrix, SourceMatrix,
};
use pgmca::evaluate::{beta_nmf_kl, run_flux_sweep, sad, sad_vs_flux_svg, SweepSpec};
use pgmca::gmca::{gmca_run, GmcaDiagnostics, GmcaSettings};
use pgmca::pgmca::{final_sources, pgmca_run, PgmcaSettings, RunReport, StopReason};
use pgmca::simulate::{simulate, SimulationConfig};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};
use crate::{InspectArgs, MethodArg, RunArgs, SimulateArgs, SweepArgs};

/// Settings of the KL NMF baseline when run on its own.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NmfSettings {
    pub n_iter: usize,
    pub seed: u64,
}

impl Default for NmfSettings {
    fn default() -> Self {
        Self { n_iter: 500, seed: 0 }
    }
}

fn read_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> CliResult<T> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::config(path, e))
}

fn create_out_dir(out: &Path) -> CliResult<()> {
    fs::create_dir_all(out).map_err(|e| CliError::io(out, e))
}

fn write_text(path: PathBuf, text: &str) -> CliResult<()> {
    write_atomic(&path, text.as_bytes()).map_err(|e| CliError::Io(e.to_string()))
}

fn write_json<T: Serialize>(path: PathBuf, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Io(e.to_string()))?;
    text.push('\n');
    write_text(path, &text)
}

fn io_err(e: pgmca::Error) -> CliError {
    CliError::Io(e.to_string())
}

pub fn simulate_cmd(args: &SimulateArgs, verbose: bool) -> CliResult<()> {
    let mut config: SimulationConfig = read_config(args.config.as_deref())?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    config.validate().map_err(|e| CliError::Config(e.to_string()))?;
    let sim = simulate(&config).map_err(|e| CliError::Config(e.to_string()))?;

    create_out_dir(&args.out)?;
    write_observations(args.out.join("X.pmat"), &sim.observations).map_err(io_err)?;
    write_mixing(args.out.join("A_true.pmat"), &sim.mixing).map_err(io_err)?;
    write_sources(args.out.join("S_true.pmat"), &sim.sources).map_err(io_err)?;
    write_json(args.out.join("config.json"), &config)?;
    if verbose {
        eprintln!(
            "simulated {} channels x {} pixels, mean count {:.4}",
            sim.observations.channels(),
            sim.observations.samples(),
            sim.observations.data().mean().unwrap_or(0.0)
        );
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct RunSummary {
    method: &'static str,
    status: &'static str,
    sources: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    stop_reason: Option<StopReason>,
    outer_iterations: usize,
    wall_time: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    sad: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    mu: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    lambda: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    reinitialized_sources: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    gmca: Option<GmcaDiagnostics>,
}

impl RunSummary {
    fn new(method: MethodArg, sources: usize) -> Self {
        Self {
            method: method.name(),
            status: "ok",
            sources,
            stop_reason: None,
            outer_iterations: 0,
            wall_time: 0.0,
            sad: None,
            error: None,
            mu: None,
            lambda: None,
            reinitialized_sources: None,
            gmca: None,
        }
    }

    fn with_pgmca(mut self, report: &RunReport) -> Self {
        self.stop_reason = Some(report.stop_reason);
        self.outer_iterations = report.outer_iterations;
        self.wall_time = report.wall_time;
        self.mu = Some(report.mu);
        self.lambda = Some(report.lambda.clone());
        self.reinitialized_sources = Some(report.reinitialized_sources.clone());
        self
    }
}

struct Estimate {
    mixing: MixingMatrix,
    sources: SourceMatrix,
    trace_csv: String,
    summary: RunSummary,
}

fn fail(out: &Path, mut summary: RunSummary, error: String) -> CliError {
    summary.status = "failed";
    summary.error = Some(error.clone());
    match write_json(out.join("report.json"), &summary) {
        Ok(()) => CliError::Solver(error),
        Err(e) => e,
    }
}

fn trace_lines(header: &str, values: &[f64], first: usize) -> String {
    let mut csv = format!("{header}\r\n");
    for (k, v) in values.iter().enumerate() {
        csv.push_str(&format!("{},{v}\r\n", k + first));
    }
    csv
}

fn run_gmca(args: &RunArgs, x: &ObservationMatrix) -> CliResult<Estimate> {
    let mut settings: GmcaSettings = read_config(args.config.as_deref())?;
    if let Some(seed) = args.seed {
        settings.seed = seed;
    }
    settings.validate().map_err(|e| CliError::Config(e.to_string()))?;
    let mut summary = RunSummary::new(args.method, args.sources);
    let started = Instant::now();
    let out = match gmca_run(x, args.sources, &settings) {
        Ok(out) => out,
        Err(e) => return Err(fail(&args.out, summary, e.to_string())),
    };
    summary.wall_time = started.elapsed().as_secs_f64();
    summary.stop_reason = Some(StopReason::MaxIter);
    summary.outer_iterations = settings.n_iter;
    summary.gmca = Some(out.diagnostics.clone());
    Ok(Estimate {
        trace_csv: trace_lines("iteration,delta_A_fro", &out.delta_a_trace, 1),
        mixing: out.mixing,
        sources: out.sources,
        summary,
    })
}

fn run_pgmca(args: &RunArgs, x: &ObservationMatrix) -> CliResult<Estimate> {
    let mut settings: PgmcaSettings = read_config(args.config.as_deref())?;
    if let Some(seed) = args.seed {
        settings.gmca.seed = seed;
    }
    settings.validate().map_err(|e| CliError::Config(e.to_string()))?;
    let summary = RunSummary::new(args.method, args.sources);
    let report = match pgmca_run(x, args.sources, &settings) {
        Ok(report) => report,
        Err(failure) => {
            let summary = match &failure.partial {
                Some(partial) => summary.with_pgmca(partial),
                None => summary,
            };
            if let Some(partial) = &failure.partial {
                write_text(args.out.join("trace.csv"), &partial.trace_csv())?;
            }
            return Err(fail(&args.out, summary, failure.error.to_string()));
        }
    };
    let mixing = report.mixing().map_err(|e| CliError::Solver(e.to_string()))?;
    let sources = final_sources(&report, x).map_err(|e| CliError::Solver(e.to_string()))?;
    Ok(Estimate {
        mixing,
        sources,
        trace_csv: report.trace_csv(),
        summary: summary.with_pgmca(&report),
    })
}

fn run_nmf(args: &RunArgs, x: &ObservationMatrix) -> CliResult<Estimate> {
    let mut settings: NmfSettings = read_config(args.config.as_deref())?;
    if let Some(seed) = args.seed {
        settings.seed = seed;
    }
    if settings.n_iter == 0 {
        return Err(CliError::Config("n_iter must be at least 1".into()));
    }
    let mut summary = RunSummary::new(args.method, args.sources);
    let started = Instant::now();
    let out = match beta_nmf_kl(x, args.sources, settings.n_iter, settings.seed) {
        Ok(out) => out,
        Err(e) => return Err(fail(&args.out, summary, e.to_string())),
    };
    summary.wall_time = started.elapsed().as_secs_f64();
    summary.stop_reason = Some(StopReason::MaxIter);
    summary.outer_iterations = settings.n_iter;
    let mixing = MixingMatrix::new(out.w).map_err(|e| CliError::Solver(e.to_string()))?;
    let sources = SourceMatrix::new(out.h, x.height(), x.width()).map_err(|e| CliError::Solver(e.to_string()))?;
    Ok(Estimate {
        mixing,
        sources,
        trace_csv: trace_lines("iteration,kl_divergence", &out.divergence_trace, 0),
        summary,
    })
}

pub fn run_cmd(args: &RunArgs, verbose: bool) -> CliResult<()> {
    let x = read_observations(&args.input).map_err(io_err)?;
    let truth = args.truth.as_ref().map(read_mixing).transpose().map_err(io_err)?;
    if args.sources == 0 || args.sources > x.channels() {
        return Err(CliError::Config(format!(
            "--sources must be between 1 and the channel count {}",
            x.channels()
        )));
    }
    if let Some(t) = &truth {
        if t.channels() != x.channels() || t.sources() != args.sources {
            return Err(CliError::Config(format!(
                "truth is {}x{}, expected {}x{}",
                t.channels(),
                t.sources(),
                x.channels(),
                args.sources
            )));
        }
    }
    create_out_dir(&args.out)?;

    let mut estimate = match args.method {
        MethodArg::Gmca => run_gmca(args, &x)?,
        MethodArg::Pgmca => run_pgmca(args, &x)?,
        MethodArg::BetaNmf => run_nmf(args, &x)?,
    };
    if let Some(t) = &truth {
        let value = sad(&estimate.mixing.data().view(), &t.data().view()).map_err(|e| CliError::Solver(e.to_string()))?;
        estimate.summary.sad = Some(value);
    }

    write_mixing(args.out.join("A_hat.pmat"), &estimate.mixing).map_err(io_err)?;
    write_sources(args.out.join("S_hat.pmat"), &estimate.sources).map_err(io_err)?;
    write_text(args.out.join("trace.csv"), &estimate.trace_csv)?;
    write_json(args.out.join("report.json"), &estimate.summary)?;
    if verbose {
        eprintln!(
            "{}: {} iterations in {:.2}s{}",
            estimate.summary.method,
            estimate.summary.outer_iterations,
            estimate.summary.wall_time,
            estimate.summary.sad.map(|v| format!(", SAD {v:.5}")).unwrap_or_default()
        );
    }
    Ok(())
}

pub fn sweep_cmd(args: &SweepArgs, verbose: bool) -> CliResult<()> {
    let mut spec: SweepSpec = read_config(args.config.as_deref())?;
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    spec.validate().map_err(|e| CliError::Config(e.to_string()))?;
    if args.jobs == 0 {
        return Err(CliError::Config("--jobs must be at least 1".into()));
    }
    create_out_dir(&args.out)?;
    let result = run_flux_sweep(&spec, args.jobs).map_err(|e| CliError::Solver(e.to_string()))?;
    write_text(args.out.join("sweep.csv"), &result.to_csv())?;
    write_json(args.out.join("summary.json"), &result.summary)?;
    write_text(args.out.join("sad_vs_flux.svg"), &sad_vs_flux_svg(&result))?;
    if verbose {
        for s in &result.summary {
            match s.mean_sad {
                Some(mean) => eprintln!("{:>9} flux {:>6}: mean SAD {mean:.5}", s.method.name(), s.flux),
                None => eprintln!("{:>9} flux {:>6}: all runs failed", s.method.name(), s.flux),
            }
        }
    }
    Ok(())
}

pub fn inspect_cmd(args: &InspectArgs) -> CliResult<()> {
    let (data, header) = read_matrix(&args.input).map_err(io_err)?;
    let role = serde_json::to_value(header.role).map_err(|e| CliError::Io(e.to_string()))?;
    println!("role: {}", role.as_str().unwrap_or("?"));
    println!("shape: {}x{}", header.rows, header.cols);
    if header.height > 0 {
        println!("grid: {}x{}", header.height, header.width);
    }
    let (min, max) = data
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    println!("min: {min}");
    println!("max: {max}");
    println!("mean: {}", data.mean().unwrap_or(f64::NAN));
    if header.role == MatrixRole::Mixing {
        let norms: Vec<String> = data.columns().into_iter().map(|c| format!("{}", c.dot(&c).sqrt())).collect();
        println!("column_norms: {}", norms.join(" "));
    }
    if let Some(truth_path) = &args.truth {
        if header.role != MatrixRole::Mixing {
            return Err(CliError::Config("--truth needs a mixing matrix as input".into()));
        }
        let estimate = read_mixing(&args.input).map_err(io_err)?;
        let truth = read_mixing(truth_path).map_err(io_err)?;
        let value = sad(&estimate.data().view(), &truth.data().view()).map_err(|e| CliError::Config(e.to_string()))?;
        println!("sad: {value}");
    }
    Ok(())
}

//! Sparse blind source separation from Poisson counts.
//!
//! Minimizes `||Lambda . S Phi^T||_1 + L_mu(X | A, S)` over `S >= 0` and
//! `A` in C by block-coordinate descent: a generalized forward-backward
//! solve for `S` with `A` fixed, then an accelerated projected-gradient
//! solve for `A` with `S` fixed. `L_mu` is the Moreau envelope of the
//! Poisson anti-log-likelihood, `Phi` the starlet transform.

use std::time::Instant;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::data::{MixingMatrix, ObservationMatrix, SourceMatrix};
use crate::error::{Error, Result};
use crate::gmca::{gmca_run, mad_sigma, GmcaSettings};
use crate::linalg::{op_norm_sq_columns, op_norm_sq_rows};
use crate::objective::{grad_smoothed_wrt_s, smoothed_nll, smoothed_value_and_grad, ObjectiveValue, SmoothingParameter};
use crate::prox::{project_c, project_nonneg, prox_sparsity, sparsity_penalty, RegularizationWeights};
use crate::solvers::{fista_minimize, gfbs_minimize, CompositeProblem, SolverSettings, SplitProblem};
use crate::starlet::{check_scales, default_scales, starlet_forward};

/// Safety factor applied to power-iteration Lipschitz estimates.
pub const LIPSCHITZ_SAFETY: f64 = 1.05;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MuPolicy {
    /// Mean of all observed counts.
    MeanCounts,
    Explicit(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PgmcaSettings {
    /// Stop once `||A_{k+1} - A_k||_F` falls below this. May be `"inf"` in
    /// JSON.
    #[serde(serialize_with = "ser_maybe_inf", deserialize_with = "de_maybe_inf")]
    pub epsilon: f64,
    pub max_outer_iter: usize,
    pub tau: f64,
    pub mu_policy: MuPolicy,
    pub s_step: SolverSettings,
    pub a_step: SolverSettings,
    /// Starlet scales; `None` picks [`default_scales`] for the image size.
    pub scales: Option<usize>,
    pub gmca: GmcaSettings,
}

impl Default for PgmcaSettings {
    fn default() -> Self {
        Self {
            epsilon: 1e-6,
            max_outer_iter: 10_000,
            tau: 1.0,
            mu_policy: MuPolicy::MeanCounts,
            s_step: SolverSettings {
                max_iter: 250,
                tol: 1e-6,
            },
            a_step: SolverSettings {
                max_iter: 200,
                tol: 1e-6,
            },
            scales: None,
            gmca: GmcaSettings::default(),
        }
    }
}

impl PgmcaSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) {
            return Err(Error::InvalidParameter("epsilon must be positive".into()));
        }
        if self.max_outer_iter == 0 {
            return Err(Error::InvalidParameter("max_outer_iter must be at least 1".into()));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::InvalidParameter("tau must be positive".into()));
        }
        if let MuPolicy::Explicit(mu) = self.mu_policy {
            SmoothingParameter::new(mu)?;
        }
        self.s_step.validate()?;
        self.a_step.validate()?;
        self.gmca.validate()
    }
}

fn ser_maybe_inf<S: Serializer>(value: &f64, serializer: S) -> std::result::Result<S::Ok, S::Error> {
    if value.is_infinite() && *value > 0.0 {
        serializer.serialize_str("inf")
    } else {
        serializer.serialize_f64(*value)
    }
}

fn de_maybe_inf<'de, D: Deserializer<'de>>(deserializer: D) -> std::result::Result<f64, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum NumberOrWord {
        Number(f64),
        Word(String),
    }
    match NumberOrWord::deserialize(deserializer)? {
        NumberOrWord::Number(v) => Ok(v),
        NumberOrWord::Word(w) if w.eq_ignore_ascii_case("inf") || w.eq_ignore_ascii_case("infinity") => {
            Ok(f64::INFINITY)
        }
        NumberOrWord::Word(w) => Err(serde::de::Error::custom(format!("expected a number or \"inf\", got {w:?}"))),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    Converged,
    MaxIter,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub outer_iterations: usize,
    /// Smoothed objective after each outer iteration.
    pub objective_trace: Vec<ObjectiveValue>,
    /// `||A_{k+1} - A_k||_F` after each outer iteration.
    pub delta_a_trace: Vec<f64>,
    #[serde(skip)]
    pub final_a: Array2<f64>,
    #[serde(skip)]
    pub final_s: Array2<f64>,
    pub stop_reason: StopReason,
    pub wall_time: f64,
    pub mu: f64,
    pub lambda: Vec<f64>,
    /// Source rows that came out of the initializer identically zero.
    pub reinitialized_sources: Vec<usize>,
}

impl RunReport {
    pub fn mixing(&self) -> Result<MixingMatrix> {
        MixingMatrix::new(self.final_a.clone())
    }

    /// Writes the convergence trace as CSV with columns
    /// `outer_iter,data_fidelity,l1_penalty,total,delta_A_fro`.
    pub fn trace_csv(&self) -> String {
        let mut out = String::from("outer_iter,data_fidelity,l1_penalty,total,delta_A_fro\r\n");
        for (k, (obj, delta)) in self.objective_trace.iter().zip(&self.delta_a_trace).enumerate() {
            out.push_str(&format!(
                "{},{},{},{},{}\r\n",
                k + 1,
                obj.data_fidelity,
                obj.l1_penalty,
                obj.total,
                delta
            ));
        }
        out
    }
}

/// A failed run together with whatever had been computed.
#[derive(Debug, thiserror::Error)]
#[error("{error}")]
pub struct RunFailure {
    #[source]
    pub error: Error,
    pub partial: Option<Box<RunReport>>,
}

impl From<Error> for RunFailure {
    fn from(error: Error) -> Self {
        Self { error, partial: None }
    }
}

/// Mean of all observed counts.
pub fn select_mu(x: &ObservationMatrix) -> Result<SmoothingParameter> {
    let mean = x.data().mean().unwrap_or(0.0);
    if mean <= 0.0 {
        return Err(Error::NoSignal("observations are identically zero".into()));
    }
    SmoothingParameter::new(mean)
}

/// `lambda_i = tau * MAD` of the starlet detail coefficients of row `i` of
/// the smoothed-likelihood gradient at the initial point, all detail
/// scales pooled.
pub fn select_lambda(
    x: &ObservationMatrix,
    a0: &ArrayView2<f64>,
    s0: &ArrayView2<f64>,
    mu: SmoothingParameter,
    tau: f64,
    scales: usize,
) -> Result<RegularizationWeights> {
    let grad = grad_smoothed_wrt_s(&x.data().view(), a0, s0, mu)?;
    let (height, width) = (x.height(), x.width());
    let mut lambda = Vec::with_capacity(grad.nrows());
    for row in grad.rows() {
        let image = row.to_shape((height, width)).expect("row-major image");
        let stack = starlet_forward(&image.view(), scales)?;
        let pooled: Vec<f64> = stack.detail_coefficients().collect();
        lambda.push(tau * mad_sigma(&pooled)?);
    }
    RegularizationWeights::new(lambda, tau)
}

struct SourceStep<'a> {
    x: &'a Array2<f64>,
    a: &'a Array2<f64>,
    mu: SmoothingParameter,
    weights: &'a RegularizationWeights,
    height: usize,
    width: usize,
    scales: usize,
}

impl SplitProblem for SourceStep<'_> {
    fn gradient(&mut self, s: &Array2<f64>) -> Result<Array2<f64>> {
        let (_, g) = smoothed_value_and_grad(&self.x.view(), &self.a.dot(s).view(), self.mu)?;
        Ok(self.a.t().dot(&g))
    }

    fn prox(&mut self, term: usize, v: Array2<f64>, step: f64) -> Result<Array2<f64>> {
        match term {
            0 => prox_sparsity(&v.view(), self.height, self.width, self.weights, step, self.scales),
            _ => Ok(project_nonneg(&v.view())),
        }
    }

    fn objective(&mut self, s: &Array2<f64>) -> Result<f64> {
        Ok(smoothed_nll(&self.x.view(), &self.a.dot(s).view(), self.mu)?
            + sparsity_penalty(&s.view(), self.height, self.width, self.weights, self.scales)?)
    }
}

struct MixingStep<'a> {
    x: &'a Array2<f64>,
    s: &'a Array2<f64>,
    mu: SmoothingParameter,
}

impl CompositeProblem for MixingStep<'_> {
    fn smooth(&mut self, a: &Array2<f64>) -> Result<(f64, Array2<f64>)> {
        let (value, g) = smoothed_value_and_grad(&self.x.view(), &a.dot(self.s).view(), self.mu)?;
        Ok((value, g.dot(&self.s.t())))
    }

    fn smooth_value(&mut self, a: &Array2<f64>) -> Result<f64> {
        smoothed_nll(&self.x.view(), &a.dot(self.s).view(), self.mu)
    }

    fn nonsmooth(&mut self, _a: &Array2<f64>) -> Result<f64> {
        Ok(0.0)
    }

    fn prox(&mut self, v: Array2<f64>, _step: f64) -> Result<Array2<f64>> {
        Ok(project_c(&v.view()))
    }
}

/// Replaces identically zero source rows by the nonnegative coarse starlet
/// plane of the residual back-projected on the source's spectrum.
fn reinitialize_empty_sources(
    x: &ObservationMatrix,
    a: &Array2<f64>,
    s: &mut Array2<f64>,
    scales: usize,
) -> Result<Vec<usize>> {
    let empty: Vec<usize> = (0..s.nrows())
        .filter(|&i| s.row(i).iter().all(|&v| v == 0.0))
        .collect();
    if empty.is_empty() {
        return Ok(empty);
    }
    let residual = x.data() - &a.dot(s);
    let fallback = x.data().mean().unwrap_or(0.0).max(f64::MIN_POSITIVE);
    for &i in &empty {
        let column = a.column(i);
        let norm_sq = column.dot(&column);
        let projected = if norm_sq > 0.0 {
            column.dot(&residual) / norm_sq
        } else {
            ndarray::Array1::zeros(s.ncols())
        };
        let image = projected
            .to_shape((x.height(), x.width()))
            .expect("row-major image")
            .to_owned();
        let coarse = starlet_forward(&image.view(), scales)?.coarse;
        let mut row = s.row_mut(i);
        for (dst, &c) in row.iter_mut().zip(coarse.iter()) {
            *dst = c.max(0.0);
        }
        if row.iter().all(|&v| v == 0.0) {
            row.fill(fallback);
        }
    }
    Ok(empty)
}

fn composite_objective(
    x: &Array2<f64>,
    a: &Array2<f64>,
    s: &Array2<f64>,
    mu: SmoothingParameter,
    weights: &RegularizationWeights,
    height: usize,
    width: usize,
    scales: usize,
) -> Result<ObjectiveValue> {
    let fidelity = smoothed_nll(&x.view(), &a.dot(s).view(), mu)?;
    let penalty = sparsity_penalty(&s.view(), height, width, weights, scales)?;
    let value = ObjectiveValue::new(fidelity, penalty);
    if !value.total.is_finite() {
        return Err(Error::SolverAbort("non-finite objective".into()));
    }
    Ok(value)
}

/// Full run: GMCA initialization followed by the Poisson block-coordinate
/// loop.
pub fn pgmca_run(x: &ObservationMatrix, n: usize, settings: &PgmcaSettings) -> std::result::Result<RunReport, RunFailure> {
    settings.validate()?;
    let mut gmca_settings = settings.gmca;
    if gmca_settings.scales.is_none() {
        gmca_settings.scales = settings.scales;
    }
    let init = gmca_run(x, n, &gmca_settings)?;
    pgmca_run_from(x, init.mixing.data(), init.sources.data(), settings)
}

/// Block-coordinate loop from an explicit starting point.
pub fn pgmca_run_from(
    x: &ObservationMatrix,
    a0: &Array2<f64>,
    s0: &Array2<f64>,
    settings: &PgmcaSettings,
) -> std::result::Result<RunReport, RunFailure> {
    let started = Instant::now();
    settings.validate()?;
    let (height, width) = (x.height(), x.width());
    let scales = settings.scales.unwrap_or_else(|| default_scales(height, width));
    check_scales(height, width, scales)?;
    if a0.nrows() != x.channels() || a0.ncols() != s0.nrows() || s0.ncols() != x.samples() {
        return Err(Error::Shape(format!(
            "X is {:?}, A0 is {:?}, S0 is {:?}",
            x.data().dim(),
            a0.dim(),
            s0.dim()
        ))
        .into());
    }
    let xd = x.data();

    let mu = match settings.mu_policy {
        MuPolicy::MeanCounts => select_mu(x)?,
        MuPolicy::Explicit(v) => SmoothingParameter::new(v)?,
    };
    let mut a = project_c(&a0.view());
    let mut s = project_nonneg(&s0.view());
    let reinitialized = reinitialize_empty_sources(x, &a, &mut s, scales)?;
    let weights = select_lambda(x, &a.view(), &s.view(), mu, settings.tau, scales)?;

    let mut report = RunReport {
        outer_iterations: 0,
        objective_trace: Vec::new(),
        delta_a_trace: Vec::new(),
        final_a: a.clone(),
        final_s: s.clone(),
        stop_reason: StopReason::MaxIter,
        wall_time: 0.0,
        mu: mu.value(),
        lambda: weights.lambda.clone(),
        reinitialized_sources: reinitialized,
    };
    let fail = |error: Error, mut report: RunReport, started: Instant| {
        report.wall_time = started.elapsed().as_secs_f64();
        RunFailure {
            error,
            partial: Some(Box::new(report)),
        }
    };

    if let Err(e) = composite_objective(xd, &a, &s, mu, &weights, height, width, scales) {
        return Err(fail(e, report, started));
    }

    for k in 0..settings.max_outer_iter {
        let step = (|| -> Result<(Array2<f64>, Array2<f64>, ObjectiveValue)> {
            // S-step
            let lip_s = LIPSCHITZ_SAFETY * op_norm_sq_columns(&a.view()) / mu.value();
            let mut problem = SourceStep {
                x: xd,
                a: &a,
                mu,
                weights: &weights,
                height,
                width,
                scales,
            };
            let outcome = if lip_s > 0.0 {
                Some(gfbs_minimize(&mut problem, s.clone(), [0.5, 0.5], lip_s, &settings.s_step, None)?)
            } else {
                None
            };
            let new_s = outcome.map_or_else(|| s.clone(), |o| project_nonneg(&o.x.view()));
            let after_s = composite_objective(xd, &a, &new_s, mu, &weights, height, width, scales)?;

            // A-step
            let lip_a = LIPSCHITZ_SAFETY * op_norm_sq_rows(&new_s.view()) / mu.value();
            let new_a = if lip_a > 0.0 {
                let mut problem = MixingStep { x: xd, s: &new_s, mu };
                let outcome = fista_minimize(&mut problem, a.clone(), lip_a, &settings.a_step, None)?;
                outcome.x
            } else {
                a.clone()
            };
            let mut after_a = composite_objective(xd, &new_a, &new_s, mu, &weights, height, width, scales)?;
            let new_a = if after_a.total > after_s.total {
                after_a = after_s;
                a.clone()
            } else {
                new_a
            };
            Ok((new_s, new_a, after_a))
        })();

        let (new_s, new_a, value) = match step {
            Ok(v) => v,
            Err(e) => {
                report.final_a = a;
                report.final_s = s;
                return Err(fail(e, report, started));
            }
        };
        let delta = (&new_a - &a).mapv(|v| v * v).sum().sqrt();
        a = new_a;
        s = new_s;
        report.objective_trace.push(value);
        report.delta_a_trace.push(delta);
        report.outer_iterations = k + 1;
        if delta < settings.epsilon {
            report.stop_reason = StopReason::Converged;
            break;
        }
    }

    report.final_a = a;
    report.final_s = s;
    report.wall_time = started.elapsed().as_secs_f64();
    Ok(report)
}

/// Source matrix of a finished run.
pub fn final_sources(report: &RunReport, x: &ObservationMatrix) -> Result<SourceMatrix> {
    SourceMatrix::new(report.final_s.clone(), x.height(), x.width())
}

//! Gradient descent, Newton and natural-gradient loops over a smooth objective.
//!
//! Each iteration solves a tangent-space problem at the current iterate:
//!
//! * gradient descent: Δθ = −η ∇F (identity metric)
//! * Newton: Δθ = η · argmin of the quadratic model, (H + λI)Δθ = −∇F
//! * natural gradient: Δθ = η·x where CG solves Ĩ x = −∇F, with Ĩ the damped
//!   metric of a freshly computed Fisher matrix
//!
//! Step sizes are fixed; there is no line search.

use std::io::{BufRead, Write};
use std::str::FromStr;

use log::{debug, warn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::cg::{conjugate_gradient, CgTrace, LinearOperator};
use crate::error::{Error, Result};
use crate::fisher::{exact_fisher, kl_exact, mc_fisher, FisherMatrix};
use crate::metric::{damp, damp_relative, spectral_decompose, DEFAULT_RANK_TOL, DEFAULT_RELATIVE_EPSILON};
use crate::objective::{NllObjective, Objective};
use crate::prob_model::{ParamPoint, TangentVector};
use crate::taylor::{build_quadratic, newton_step, HessianMode};

pub const DEFAULT_CG_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Gd,
    Newton,
    NaturalGradient,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Gd => "gd",
            Method::Newton => "newton",
            Method::NaturalGradient => "natural-gradient",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gd" => Ok(Method::Gd),
            "newton" => Ok(Method::Newton),
            "natural-gradient" | "ng" => Ok(Method::NaturalGradient),
            other => Err(Error::InvalidArgument(format!(
                "unknown method {other:?} (expected gd, newton or natural-gradient)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FisherEstimator {
    Exact,
    MonteCarlo,
}

/// How the natural-gradient metric is rebuilt at every iterate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FisherConfig {
    pub estimator: FisherEstimator,
    pub draws_per_obs: usize,
    /// Absolute damping; `None` means `relative_epsilon · λ_max`.
    pub epsilon: Option<f64>,
    pub relative_epsilon: f64,
    pub rank_tol: f64,
    pub seed: u64,
    pub cg_tol: f64,
    /// Defaults to the parameter dimension.
    pub cg_max_iter: Option<usize>,
}

impl Default for FisherConfig {
    fn default() -> Self {
        Self {
            estimator: FisherEstimator::MonteCarlo,
            draws_per_obs: 10,
            epsilon: None,
            relative_epsilon: DEFAULT_RELATIVE_EPSILON,
            rank_tol: DEFAULT_RANK_TOL,
            seed: 0,
            cg_tol: DEFAULT_CG_TOL,
            cg_max_iter: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerConfig {
    pub method: Method,
    pub step_size: f64,
    pub iterations: usize,
    /// λ in (H + λI) for Newton steps.
    pub regularizer: f64,
    pub fisher: FisherConfig,
}

impl OptimizerConfig {
    pub fn new(method: Method, step_size: f64, iterations: usize) -> Self {
        Self {
            method,
            step_size,
            iterations,
            regularizer: 0.0,
            fisher: FisherConfig::default(),
        }
    }
}

/// An objective that may also carry a probabilistic geometry.
pub trait Problem: Objective {
    fn fisher(
        &self,
        _theta: &ParamPoint,
        _config: &FisherConfig,
        _rng: &mut ChaCha8Rng,
    ) -> Result<FisherMatrix> {
        Err(Error::Unsupported("a Fisher metric"))
    }

    /// KL divergence between the predictive distributions at two iterates.
    fn divergence(&self, _from: &ParamPoint, _to: &ParamPoint) -> Option<Result<f64>> {
        None
    }
}

impl Problem for NllObjective<'_> {
    fn fisher(
        &self,
        theta: &ParamPoint,
        config: &FisherConfig,
        rng: &mut ChaCha8Rng,
    ) -> Result<FisherMatrix> {
        match config.estimator {
            FisherEstimator::Exact => exact_fisher(self.model, theta, self.data),
            FisherEstimator::MonteCarlo => {
                mc_fisher(self.model, theta, self.data, config.draws_per_obs, rng)
            }
        }
    }

    fn divergence(&self, from: &ParamPoint, to: &ParamPoint) -> Option<Result<f64>> {
        Some(kl_exact(self.model, from, to, self.data))
    }
}

impl Problem for crate::objective::QuadraticObjective {}

/// −η ∇F.
pub fn gd_step(gradient: &TangentVector, step_size: f64) -> Result<TangentVector> {
    check_step_size(step_size)?;
    TangentVector::new(gradient.as_vector() * -step_size)
}

/// η·x where CG solves `metric`·x = −∇F.
pub fn ng_step<A: LinearOperator + ?Sized>(
    metric: &A,
    gradient: &TangentVector,
    step_size: f64,
    tol: f64,
    max_iter: usize,
) -> Result<(TangentVector, CgTrace)> {
    check_step_size(step_size)?;
    let rhs = TangentVector::new(-gradient.as_vector())?;
    let trace = conjugate_gradient(metric, &rhs, tol, max_iter)?;
    if !trace.converged {
        debug!(
            "natural-gradient CG stopped after {} iterations at relative residual {:e}",
            trace.iterations,
            trace.final_residual_norm() / trace.residual_norms[0]
        );
    }
    let step = TangentVector::new(trace.solution.as_vector() * step_size)?;
    Ok((step, trace))
}

fn check_step_size(step_size: f64) -> Result<()> {
    if step_size > 0.0 && step_size.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("step size must be positive, got {step_size}")))
    }
}

/// One record per optimizer iteration, as written to JSON lines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub index: usize,
    pub loss: f64,
    pub step_kl: Option<f64>,
    pub residual_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerRun {
    pub method: Method,
    pub step_size: f64,
    pub initial_point: ParamPoint,
    pub initial_loss: f64,
    /// θ₁, θ₂, … (the starting point is kept separately).
    pub iterates: Vec<ParamPoint>,
    pub losses: Vec<f64>,
    /// KL(θₜ₋₁ ‖ θₜ); `None` when the objective has no predictive distribution.
    pub kl_steps: Vec<Option<f64>>,
    /// CG iterations per step (zero for non-CG methods).
    pub cg_iterations: Vec<usize>,
    pub cg_converged: Vec<bool>,
    /// Why the run stopped early, if it did.
    pub truncated: Option<String>,
}

impl OptimizerRun {
    pub fn len(&self) -> usize {
        self.iterates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.iterates.is_empty()
    }

    pub fn final_point(&self) -> &ParamPoint {
        self.iterates.last().unwrap_or(&self.initial_point)
    }

    pub fn final_loss(&self) -> f64 {
        self.losses.last().copied().unwrap_or(self.initial_loss)
    }

    pub fn records(&self) -> Vec<TraceRecord> {
        (0..self.len())
            .map(|i| TraceRecord {
                index: i + 1,
                loss: self.losses[i],
                step_kl: self.kl_steps[i],
                residual_count: self.cg_iterations[i],
            })
            .collect()
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        for rec in self.records() {
            serde_json::to_writer(&mut out, &rec)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// Parses JSON-lines trace records; errors carry the 1-based line number.
pub fn read_trace<R: BufRead>(input: R) -> Result<Vec<TraceRecord>> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}

struct StepOutcome {
    step: TangentVector,
    cg_iterations: usize,
    cg_converged: bool,
}

fn compute_step<P: Problem + ?Sized>(
    problem: &P,
    theta: &ParamPoint,
    config: &OptimizerConfig,
    rng: &mut ChaCha8Rng,
) -> Result<StepOutcome> {
    let gradient = problem.gradient(theta)?;
    match config.method {
        Method::Gd => Ok(StepOutcome {
            step: gd_step(&gradient, config.step_size)?,
            cg_iterations: 0,
            cg_converged: true,
        }),
        Method::Newton => {
            let mode = if problem.hessian(theta).is_some() {
                HessianMode::Analytic
            } else {
                HessianMode::FiniteDifference
            };
            let model = build_quadratic(problem, theta, mode)?;
            let step = newton_step(&model, config.regularizer)?;
            Ok(StepOutcome {
                step: step.scaled(config.step_size)?,
                cg_iterations: 0,
                cg_converged: true,
            })
        }
        Method::NaturalGradient => {
            let fc = &config.fisher;
            let fisher = problem.fisher(theta, fc, rng)?;
            let decomposition = spectral_decompose(fisher.matrix(), fc.rank_tol)?;
            let metric = match fc.epsilon {
                Some(eps) => damp(decomposition, eps)?,
                None => damp_relative(decomposition, fc.relative_epsilon)?,
            };
            debug!("metric rank {} of {}, epsilon {:e}", metric.rank(), metric.dim(), metric.epsilon());
            let max_iter = fc.cg_max_iter.unwrap_or(problem.dim());
            let (step, trace) = ng_step(&metric, &gradient, config.step_size, fc.cg_tol, max_iter)?;
            Ok(StepOutcome {
                step,
                cg_iterations: trace.iterations,
                cg_converged: trace.converged,
            })
        }
    }
}

/// Runs `config.iterations` steps of the configured method from `theta0`.
///
/// Failures inside the loop (a non-finite loss, a singular Newton system, …)
/// truncate the run and are reported in [`OptimizerRun::truncated`]; only
/// invalid configuration or a bad starting point is returned as an error.
pub fn run_optimizer<P: Problem + ?Sized>(
    problem: &P,
    theta0: &ParamPoint,
    config: &OptimizerConfig,
) -> Result<OptimizerRun> {
    check_step_size(config.step_size)?;
    crate::error::check_dim("starting point", problem.dim(), theta0.dim())?;
    let initial_loss = problem.value(theta0)?;
    if !initial_loss.is_finite() {
        return Err(Error::NonFinite("initial loss"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.fisher.seed);
    let mut run = OptimizerRun {
        method: config.method,
        step_size: config.step_size,
        initial_point: theta0.clone(),
        initial_loss,
        iterates: Vec::with_capacity(config.iterations),
        losses: Vec::with_capacity(config.iterations),
        kl_steps: Vec::with_capacity(config.iterations),
        cg_iterations: Vec::with_capacity(config.iterations),
        cg_converged: Vec::with_capacity(config.iterations),
        truncated: None,
    };

    let mut theta = theta0.clone();
    for t in 1..=config.iterations {
        let attempt = compute_step(problem, &theta, config, &mut rng).and_then(|outcome| {
            let next = theta.offset(&outcome.step)?;
            let loss = problem.value(&next)?;
            if !loss.is_finite() {
                return Err(Error::NonFinite("loss"));
            }
            let kl = problem.divergence(&theta, &next).transpose()?;
            Ok((outcome, next, loss, kl))
        });
        match attempt {
            Ok((outcome, next, loss, kl)) => {
                run.iterates.push(next.clone());
                run.losses.push(loss);
                run.kl_steps.push(kl);
                run.cg_iterations.push(outcome.cg_iterations);
                run.cg_converged.push(outcome.cg_converged);
                theta = next;
            }
            Err(e) => {
                let msg = format!("{} stopped at iteration {t}: {e}", config.method);
                warn!("{msg}");
                run.truncated = Some(msg);
                break;
            }
        }
    }
    Ok(run)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solver::IdentityOperator;
    use crate::metric::spectral_decompose;
    use crate::objective::QuadraticObjective;
    use crate::prob_model::{Dataset, Hypothesis, ModelSpec, Observation};
    use nalgebra::{DMatrix, DVector};

    fn tv(v: &[f64]) -> TangentVector {
        TangentVector::from_slice(v).unwrap()
    }

    #[test]
    fn gd_step_examples() {
        assert_eq!(gd_step(&TangentVector::zeros(2), 0.3).unwrap().amax(), 0.0);
        assert_eq!(gd_step(&tv(&[1.0, 0.0]), 0.1).unwrap(), tv(&[-0.1, 0.0]));
        let g = tv(&[0.3, -0.4]);
        let n1 = gd_step(&g, 0.5).unwrap().norm();
        let n2 = gd_step(&g, 1.5).unwrap().norm();
        assert!((n2 - 3.0 * n1).abs() < 1e-15);
        assert!(gd_step(&g, 0.0).is_err());
    }

    #[test]
    fn ng_under_identity_is_gd() {
        let g = tv(&[0.31, -1.7, 2.9, 1e-3]);
        for eta in [0.1, 0.5, 1.0, 3.7] {
            let (step, _) = ng_step(&IdentityOperator(4), &g, eta, 1e-10, 4).unwrap();
            assert_eq!(step, gd_step(&g, eta).unwrap());
        }
        let metric = damp(spectral_decompose(&DMatrix::identity(4, 4), 1e-10).unwrap(), 1e-8).unwrap();
        let (step, _) = ng_step(&metric, &g, 0.5, 1e-10, 4).unwrap();
        assert_eq!(step, gd_step(&g, 0.5).unwrap());
    }

    #[test]
    fn ng_diagonal_metric() {
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 0.0]));
        let metric = damp(spectral_decompose(&a, 1e-10).unwrap(), 1e-3).unwrap();
        let (step, trace) = ng_step(&metric, &tv(&[2.0, 1e-3]), 1.0, 1e-12, 2).unwrap();
        assert!(trace.converged);
        assert!((step[0] + 1.0).abs() < 1e-12);
        assert!((step[1] + 1.0).abs() < 1e-9);
    }

    #[test]
    fn method_names_roundtrip() {
        for m in [Method::Gd, Method::Newton, Method::NaturalGradient] {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
        assert!("adam".parse::<Method>().is_err());
    }

    #[test]
    fn newton_minimizes_quadratic_in_one_step() {
        let a = DMatrix::from_row_slice(2, 2, &[3.0, 1.0, 1.0, 2.0]);
        let b = DVector::from_vec(vec![-1.0, 4.0]);
        let f = QuadraticObjective::new(a.clone(), b.clone(), 0.25).unwrap();
        let argmin = a.clone().lu().solve(&(-&b)).unwrap();
        let min = f.value(&ParamPoint::new(argmin).unwrap()).unwrap();
        let run = run_optimizer(
            &f,
            &ParamPoint::from_slice(&[5.0, -7.0]).unwrap(),
            &OptimizerConfig::new(Method::Newton, 1.0, 3),
        )
        .unwrap();
        assert!((run.losses[0] - min).abs() <= 1e-10);
        assert_eq!(run.kl_steps[0], None);
    }

    #[test]
    fn ng_requires_probabilistic_objective() {
        let f = QuadraticObjective::centred(&DVector::from_vec(vec![1.0])).unwrap();
        let run = run_optimizer(
            &f,
            &ParamPoint::zeros(1),
            &OptimizerConfig::new(Method::NaturalGradient, 1.0, 3),
        )
        .unwrap();
        assert!(run.is_empty());
        assert!(run.truncated.unwrap().contains("Fisher"));
    }

    #[test]
    fn singular_newton_truncates_run() {
        let model = ModelSpec::softmax(1, 2).unwrap();
        let data = Dataset::new(
            vec![Observation::from_slice(&[1.0]).unwrap()],
            vec![Hypothesis(0)],
        )
        .unwrap();
        let f = NllObjective::new(&model, &data).unwrap();
        let run = run_optimizer(&f, &ParamPoint::zeros(2), &OptimizerConfig::new(Method::Newton, 1.0, 5))
            .unwrap();
        assert!(run.truncated.is_some());
        let mut cfg = OptimizerConfig::new(Method::Newton, 1.0, 5);
        cfg.regularizer = 1e-3;
        let run = run_optimizer(&f, &ParamPoint::zeros(2), &cfg).unwrap();
        assert!(run.truncated.is_none());
        assert_eq!(run.len(), 5);
    }

    #[test]
    fn jsonl_roundtrip() {
        let model = ModelSpec::binary_logistic(2).unwrap();
        let data = Dataset::new(
            vec![
                Observation::from_slice(&[1.0, 0.5]).unwrap(),
                Observation::from_slice(&[-0.3, 1.0]).unwrap(),
            ],
            vec![Hypothesis(1), Hypothesis(0)],
        )
        .unwrap();
        let f = NllObjective::new(&model, &data).unwrap();
        let run = run_optimizer(&f, &ParamPoint::zeros(2), &OptimizerConfig::new(Method::Gd, 0.5, 4))
            .unwrap();
        let mut buf = Vec::new();
        run.write_jsonl(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(text.lines().count(), 4);
        assert!(text.starts_with("{\"index\":1,\"loss\":"));
        assert_eq!(read_trace(buf.as_slice()).unwrap(), run.records());
    }

    #[test]
    fn read_trace_reports_line() {
        let text = "{\"index\":1,\"loss\":0.5,\"step_kl\":0.1,\"residual_count\":0}\nnot json\n";
        assert!(matches!(read_trace(text.as_bytes()), Err(Error::Parse { line: 2, .. })));
    }
}

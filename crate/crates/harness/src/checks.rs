//! Identity suites. Each check reports the statistic it measured, the bound it
//! was held to, and whether it passed.

use std::fmt;

use anyhow::{Context, Result};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tangent_core::fisher::{
    exact_fisher, expected_hessian, fisher_arc_length, kl_exact, kl_quadratic, mc_fisher,
};
use tangent_core::metric::{damp_relative, spectral_decompose};
use tangent_core::solver::{
    cg_subspace_diagnostics, conjugate_gradient, first_drop_below, run_optimizer, FisherEstimator,
    Method, OptimizerConfig,
};
use tangent_core::taylor::{ftc_first_order, taylor_remainder, LineSegmentCurve};
use tangent_core::{
    Dataset, Hypothesis, ModelSpec, NllObjective, Objective, Observation, ParamPoint, TangentVector,
};

use crate::config::CheckConfig;
use crate::data::{normal_vector, sample_dataset};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Bound {
    AtMost { max: f64 },
    Within { lo: f64, hi: f64 },
}

impl Bound {
    fn within(range: [f64; 2]) -> Self {
        Bound::Within {
            lo: range[0],
            hi: range[1],
        }
    }

    pub fn admits(self, value: f64) -> bool {
        match self {
            Bound::AtMost { max } => value <= max,
            Bound::Within { lo, hi } => (lo..=hi).contains(&value),
        }
    }
}

impl fmt::Display for Bound {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Bound::AtMost { max } => write!(f, "<= {max:e}"),
            Bound::Within { lo, hi } => write!(f, "in [{lo}, {hi}]"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    /// The measured statistic: a worst-case gap, a median ratio, a slope, ….
    pub gap: f64,
    pub bound: Bound,
    pub instances: usize,
    pub passed: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl CheckResult {
    pub fn new(name: impl Into<String>, gap: f64, bound: Bound, instances: usize) -> Self {
        Self {
            name: name.into(),
            gap,
            bound,
            instances,
            // NaN never passes
            passed: bound.admits(gap),
            note: None,
        }
    }

    pub fn with_note(mut self, note: impl Into<String>) -> Self {
        self.note = Some(note.into());
        self
    }
}

impl fmt::Display for CheckResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "[{}] {}: {:e} (bound {}, {} instances)",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.gap,
            self.bound,
            self.instances
        )?;
        if let Some(n) = &self.note {
            write!(f, " {n}")?;
        }
        Ok(())
    }
}

/// A random problem for one suite.
struct Instance {
    model: ModelSpec,
    theta: ParamPoint,
    data: Dataset,
}

fn suite_rng(cfg: &CheckConfig, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(stream);
    rng
}

fn random_model(rng: &mut ChaCha8Rng) -> Result<ModelSpec> {
    let d = rng.random_range(1..=4);
    Ok(if rng.random_bool(0.5) {
        ModelSpec::binary_logistic(d)?
    } else {
        ModelSpec::softmax(d, rng.random_range(2..=4))?
    })
}

fn logistic_model(rng: &mut ChaCha8Rng) -> Result<ModelSpec> {
    Ok(ModelSpec::binary_logistic(rng.random_range(1..=5))?)
}

fn instance(rng: &mut ChaCha8Rng, model: ModelSpec, n: usize) -> Result<Instance> {
    let theta = ParamPoint::new(normal_vector(rng, model.param_dim()) * 0.5)?;
    let data = sample_dataset(&model, &theta, n, rng)?;
    Ok(Instance { model, theta, data })
}

fn direction(rng: &mut ChaCha8Rng, dim: usize, norm: f64) -> Result<TangentVector> {
    let v = normal_vector(rng, dim);
    Ok(TangentVector::new(&v * (norm / v.norm()))?)
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

fn orthogonal(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(rand_distr::StandardNormal))
        .qr()
        .q()
}

fn with_spectrum(q: &DMatrix<f64>, eigenvalues: &[f64]) -> DMatrix<f64> {
    let a = q * DMatrix::from_diagonal(&DVector::from_column_slice(eigenvalues)) * q.transpose();
    (&a + a.transpose()) * 0.5
}

/// Line-integral reconstruction of F(θ + Δθ) on logistic objectives.
pub fn ftc_reconstruction(cfg: &CheckConfig) -> Result<CheckResult> {
    let mut rng = suite_rng(cfg, 1);
    let mut worst = 0.0f64;
    for _ in 0..cfg.instances {
        let model = logistic_model(&mut rng)?;
        let n = rng.random_range(5..=40);
        let inst = instance(&mut rng, model, n)?;
        let f = NllObjective::new(&inst.model, &inst.data)?;
        let radius = rng.random_range(0.01..=1.0);
        let step = direction(&mut rng, f.dim(), radius)?;
        let direct = f.value(&inst.theta.offset(&step)?)?;
        let line = ftc_first_order(&f, &inst.theta, &step, cfg.ftc_nodes)?;
        worst = worst.max((line - direct).abs());
    }
    Ok(CheckResult::new(
        "ftc_reconstruction",
        worst,
        Bound::AtMost { max: cfg.tolerances.ftc },
        cfg.instances,
    ))
}

/// Median of remainder(Δθ) / remainder(Δθ/2); about 8 for cubic decay.
pub fn taylor_remainder_ratio(cfg: &CheckConfig) -> Result<CheckResult> {
    let mut rng = suite_rng(cfg, 2);
    let mut ratios = Vec::with_capacity(cfg.instances);
    for _ in 0..cfg.instances {
        let model = logistic_model(&mut rng)?;
        let n = rng.random_range(5..=40);
        let inst = instance(&mut rng, model, n)?;
        let f = NllObjective::new(&inst.model, &inst.data)?;
        let step = direction(&mut rng, f.dim(), cfg.remainder_step)?;
        let full = taylor_remainder(&f, &inst.theta, &step)?;
        let half = taylor_remainder(&f, &inst.theta, &step.scaled(0.5)?)?;
        ratios.push(full / half);
    }
    Ok(CheckResult::new(
        "taylor_remainder_ratio",
        median(ratios),
        Bound::within(cfg.tolerances.remainder_ratio),
        cfg.instances,
    ))
}

/// max-norm of Σₕ P(h|o) ∇log P(h|o).
pub fn score_identity(cfg: &CheckConfig) -> Result<CheckResult> {
    let mut rng = suite_rng(cfg, 3);
    let mut worst = 0.0f64;
    for _ in 0..cfg.score_points {
        let model = random_model(&mut rng)?;
        let theta = ParamPoint::new(normal_vector(&mut rng, model.param_dim()))?;
        let o = Observation::new(normal_vector(&mut rng, model.feature_dim()))?;
        let probs = model.probabilities(&theta, &o)?;
        let mut acc = DVector::zeros(model.param_dim());
        for (h, p) in probs.iter().enumerate() {
            acc.axpy(*p, model.score(&theta, &o, Hypothesis(h))?.as_vector(), 1.0);
        }
        worst = worst.max(acc.amax());
    }
    Ok(CheckResult::new(
        "score_identity",
        worst,
        Bound::AtMost { max: cfg.tolerances.score },
        cfg.score_points,
    ))
}

/// ‖I + E[∇² log P]‖_F / (1 + ‖I‖_F) at one point.
pub fn duality_gap(model: &ModelSpec, theta: &ParamPoint, data: &Dataset) -> Result<f64> {
    let fisher = exact_fisher(model, theta, data)?.into_matrix();
    let hess = expected_hessian(model, theta, data)?;
    Ok((&fisher + hess).norm() / (1.0 + fisher.norm()))
}

pub fn fisher_hessian_duality(cfg: &CheckConfig) -> Result<CheckResult> {
    let mut rng = suite_rng(cfg, 4);
    let mut worst = 0.0f64;
    for _ in 0..cfg.instances {
        let model = random_model(&mut rng)?;
        let n = rng.random_range(1..=30);
        let inst = instance(&mut rng, model, n)?;
        worst = worst.max(duality_gap(&inst.model, &inst.theta, &inst.data)?);
    }
    Ok(CheckResult::new(
        "fisher_hessian_duality",
        worst,
        Bound::AtMost { max: cfg.tolerances.duality },
        cfg.instances,
    ))
}

/// |KL(θ‖θ+Δθ) − ½ΔθᵀIΔθ| at Δθ over the same at Δθ/2.
pub fn kl_halving_ratio(
    model: &ModelSpec,
    theta: &ParamPoint,
    data: &Dataset,
    step: &TangentVector,
) -> Result<f64> {
    let fisher = exact_fisher(model, theta, data)?.into_matrix();
    let gap = |s: &TangentVector| -> Result<f64> {
        let kl = kl_exact(model, theta, &theta.offset(s)?, data)?;
        Ok((kl - kl_quadratic(&fisher, s)?).abs())
    };
    Ok(gap(step)? / gap(&step.scaled(0.5)?)?)
}

pub fn kl_quadratic_ratio(cfg: &CheckConfig) -> Result<CheckResult> {
    let mut rng = suite_rng(cfg, 5);
    let mut ratios = Vec::with_capacity(cfg.instances);
    for _ in 0..cfg.instances {
        let model = random_model(&mut rng)?;
        let inst = instance(&mut rng, model, 10)?;
        let step = direction(&mut rng, model.param_dim(), cfg.kl_step)?;
        ratios.push(kl_halving_ratio(&inst.model, &inst.theta, &inst.data, &step)?);
    }
    Ok(CheckResult::new(
        "kl_quadratic_ratio",
        median(ratios),
        Bound::within(cfg.tolerances.kl_ratio),
        cfg.instances,
    ))
}

/// Log-log slope of the mean Frobenius error of the Monte-Carlo Fisher
/// against the total number of draws.
pub fn mc_fisher_slope(cfg: &CheckConfig) -> Result<CheckResult> {
    let mut rng = suite_rng(cfg, 6);
    let model = ModelSpec::softmax(3, 3)?;
    let inst = instance(&mut rng, model, cfg.mc_observations)?;
    let exact = exact_fisher(&model, &inst.theta, &inst.data)?.into_matrix();
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for &total in &cfg.mc_draws {
        let per_obs = total / cfg.mc_observations;
        let mut err = 0.0;
        for s in 0..cfg.mc_seeds {
            let mut r = suite_rng(cfg, 1000 + s as u64);
            let est = mc_fisher(&model, &inst.theta, &inst.data, per_obs, &mut r)?;
            err += (est.matrix() - &exact).norm();
        }
        xs.push((total as f64).ln());
        ys.push((err / cfg.mc_seeds as f64).ln());
    }
    Ok(CheckResult::new(
        "mc_fisher_slope",
        least_squares_slope(&xs, &ys),
        Bound::within(cfg.tolerances.mc_slope),
        cfg.mc_seeds,
    ))
}

fn least_squares_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let cov: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let var: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    cov / var
}

/// Positive definiteness and spectral consistency of the damped metric on
/// random PSD matrices of random rank. The eigenbasis used for the
/// consistency check is the one the matrix was built from, not the one the
/// decomposition found.
pub fn damped_metric(cfg: &CheckConfig, relative_epsilon: f64, rank_tol: f64) -> Result<[CheckResult; 2]> {
    let mut rng = suite_rng(cfg, 7);
    let mut pd_gap = f64::NEG_INFINITY;
    let mut spectral = 0.0f64;
    for _ in 0..cfg.instances {
        let d = rng.random_range(1..=cfg.metric_max_dim);
        let rank = rng.random_range(0..=d);
        let eig: Vec<f64> = (0..d)
            .map(|i| if i < rank { rng.random_range(0.01..10.0) } else { 0.0 })
            .collect();
        let q = orthogonal(&mut rng, d);
        let a = with_spectrum(&q, &eig);
        let dec = spectral_decompose(&a, rank_tol)?;
        let kept = dec.rank();
        let smallest_kept = if kept > 0 { dec.eigvals()[kept - 1] } else { f64::INFINITY };
        let metric = damp_relative(dec, relative_epsilon)?;
        let eps = metric.epsilon();
        let observed = metric.to_dense().symmetric_eigenvalues().min();
        pd_gap = pd_gap.max(eps.min(smallest_kept) - observed);
        for (i, lambda) in eig.iter().enumerate() {
            let v = q.column(i).into_owned();
            let target = if *lambda > 0.0 { &a * &v } else { &v * eps };
            spectral = spectral.max((metric.matvec(&v)? - target).amax());
        }
    }
    Ok([
        CheckResult::new(
            "damped_metric_min_eigenvalue",
            pd_gap,
            Bound::AtMost { max: cfg.tolerances.metric_min_eigenvalue },
            cfg.instances,
        )
        .with_note("statistic is min(eps, lambda_m) - lambda_min"),
        CheckResult::new(
            "damped_metric_spectral_consistency",
            spectral,
            Bound::AtMost { max: cfg.tolerances.metric_spectral },
            cfg.instances,
        ),
    ])
}

/// Relative distance between CG and a dense Cholesky solve on random SPD
/// systems with eigenvalues in [0.1, 10].
pub fn cg_dense_agreement(cfg: &CheckConfig) -> Result<CheckResult> {
    let mut rng = suite_rng(cfg, 8);
    let mut worst = 0.0f64;
    for _ in 0..cfg.instances {
        let d = rng.random_range(1..=cfg.cg_max_dim);
        let eig: Vec<f64> = (0..d).map(|_| rng.random_range(0.1..10.0)).collect();
        let a = with_spectrum(&orthogonal(&mut rng, d), &eig);
        let b = normal_vector(&mut rng, d);
        let trace = conjugate_gradient(&a, &TangentVector::new(b.clone())?, 1e-12, 4 * d)?;
        let dense = a
            .cholesky()
            .context("test matrix is not positive definite")?
            .solve(&b);
        worst = worst.max((trace.solution.as_vector() - &dense).norm() / dense.norm());
    }
    Ok(CheckResult::new(
        "cg_dense_agreement",
        worst,
        Bound::AtMost { max: cfg.tolerances.cg_relative },
        cfg.instances,
    ))
}

/// Number of instances on which the image residual does not reach its
/// threshold strictly before the kernel residual does.
///
/// Instances have image eigenvalues in [1, 10], ε = relative_epsilon·λ_max and
/// a right-hand side whose kernel component has relative size
/// `image_first_leak`. The ordering depends on that leak: the image residual
/// after m steps scales roughly with its square, and with an O(1) kernel
/// component both residuals converge together at step m + 1.
pub fn cg_image_first(cfg: &CheckConfig, relative_epsilon: f64, rank_tol: f64) -> Result<CheckResult> {
    let mut rng = suite_rng(cfg, 9);
    let fraction = cfg.tolerances.image_first_fraction;
    let mut violations = 0usize;
    for _ in 0..cfg.instances {
        let d = rng.random_range(3..=8);
        let m = rng.random_range(1..d);
        let eig: Vec<f64> = (0..d)
            .map(|i| if i < m { rng.random_range(1.0..10.0) } else { 0.0 })
            .collect();
        let a = with_spectrum(&orthogonal(&mut rng, d), &eig);
        let metric = damp_relative(spectral_decompose(&a, rank_tol)?, relative_epsilon)?;
        let raw = normal_vector(&mut rng, d);
        let img = metric.project_image(&raw)?;
        let ker = metric.project_kernel(&raw)?;
        let b = &img / img.norm() + &ker * (cfg.image_first_leak / ker.norm());
        let trace = conjugate_gradient(&metric, &TangentVector::new(b)?, 1e-14, 4 * d)?;
        let diags = cg_subspace_diagnostics(&trace, &metric)?;
        let image = first_drop_below(&diags, |r| r.image, fraction);
        let kernel = first_drop_below(&diags, |r| r.kernel, fraction);
        let ordered = match (image, kernel) {
            (Some(i), Some(k)) => i < k,
            (Some(_), None) => true,
            _ => false,
        };
        if !ordered {
            violations += 1;
        }
    }
    Ok(CheckResult::new(
        "cg_image_first",
        violations as f64,
        Bound::AtMost { max: 0.0 },
        cfg.instances,
    )
    .with_note(format!("kernel leak {:e}", cfg.image_first_leak)))
}

/// Max-norm gap between natural-gradient (exact Fisher) and Newton iterates
/// on logistic problems, where the two coincide.
pub fn ng_newton_agreement(cfg: &CheckConfig) -> Result<CheckResult> {
    let mut rng = suite_rng(cfg, 10);
    let mut worst = 0.0f64;
    for _ in 0..cfg.ng_problems {
        let model = logistic_model(&mut rng)?;
        let inst = instance(&mut rng, model, 60)?;
        let f = NllObjective::new(&inst.model, &inst.data)?;
        let start = ParamPoint::new(normal_vector(&mut rng, model.param_dim()) * 0.3)?;
        let newton = OptimizerConfig {
            regularizer: 0.0,
            ..OptimizerConfig::new(Method::Newton, 1.0, cfg.ng_iterations)
        };
        let mut ng = OptimizerConfig::new(Method::NaturalGradient, 1.0, cfg.ng_iterations);
        ng.fisher.estimator = FisherEstimator::Exact;
        ng.fisher.cg_tol = 1e-15;
        let a = run_optimizer(&f, &start, &newton)?;
        let b = run_optimizer(&f, &start, &ng)?;
        if a.truncated.is_some() || b.truncated.is_some() || a.len() != b.len() {
            worst = f64::INFINITY;
            continue;
        }
        for (x, y) in a.iterates.iter().zip(&b.iterates) {
            worst = worst.max((x.as_vector() - y.as_vector()).amax());
        }
    }
    Ok(CheckResult::new(
        "ng_newton_agreement",
        worst,
        Bound::AtMost { max: cfg.tolerances.ng_newton },
        cfg.ng_problems,
    ))
}

/// Worst |L² / (2 KL) − 1| over short segments, L the Fisher arc length.
pub fn arc_length_kl(cfg: &CheckConfig) -> Result<CheckResult> {
    let mut rng = suite_rng(cfg, 11);
    let mut worst = 0.0f64;
    let mut used = 0;
    for _ in 0..cfg.instances {
        let model = random_model(&mut rng)?;
        let inst = instance(&mut rng, model, 10)?;
        let step = direction(&mut rng, model.param_dim(), cfg.arc_step)?;
        let kl = kl_exact(&model, &inst.theta, &inst.theta.offset(&step)?, &inst.data)?;
        // steps along the softmax kernel carry no information
        if kl < 1e-14 {
            continue;
        }
        let curve = LineSegmentCurve::new(inst.theta.clone(), step)?;
        let len = fisher_arc_length(&model, &curve, &inst.data, 16)?;
        worst = worst.max((len * len / (2.0 * kl) - 1.0).abs());
        used += 1;
    }
    Ok(CheckResult::new(
        "arc_length_kl",
        worst,
        Bound::AtMost { max: cfg.tolerances.arc_kl },
        used,
    ))
}

/// Every random-instance suite, in a fixed order.
pub fn run_suites(cfg: &CheckConfig, relative_epsilon: f64, rank_tol: f64) -> Result<Vec<CheckResult>> {
    let mut out = vec![
        ftc_reconstruction(cfg).context("ftc_reconstruction")?,
        taylor_remainder_ratio(cfg).context("taylor_remainder_ratio")?,
        score_identity(cfg).context("score_identity")?,
        fisher_hessian_duality(cfg).context("fisher_hessian_duality")?,
        kl_quadratic_ratio(cfg).context("kl_quadratic_ratio")?,
        mc_fisher_slope(cfg).context("mc_fisher_slope")?,
    ];
    out.extend(damped_metric(cfg, relative_epsilon, rank_tol).context("damped_metric")?);
    out.push(cg_dense_agreement(cfg).context("cg_dense_agreement")?);
    out.push(cg_image_first(cfg, relative_epsilon, rank_tol).context("cg_image_first")?);
    out.push(ng_newton_agreement(cfg).context("ng_newton_agreement")?);
    out.push(arc_length_kl(cfg).context("arc_length_kl")?);
    Ok(out)
}

/// Checks at the experiment's own data and label-generating parameters.
pub fn dataset_checks(
    cfg: &CheckConfig,
    model: &ModelSpec,
    theta: &ParamPoint,
    data: &Dataset,
) -> Result<Vec<CheckResult>> {
    let gap = duality_gap(model, theta, data)?;
    let mut rng = suite_rng(cfg, 12);
    let trials = 9;
    let mut ratios = Vec::with_capacity(trials);
    for _ in 0..trials {
        let step = direction(&mut rng, model.param_dim(), cfg.kl_step)?;
        ratios.push(kl_halving_ratio(model, theta, data, &step)?);
    }
    Ok(vec![
        CheckResult::new(
            "dataset_fisher_hessian_duality",
            gap,
            Bound::AtMost { max: cfg.tolerances.duality },
            1,
        ),
        CheckResult::new(
            "dataset_kl_quadratic_ratio",
            median(ratios),
            Bound::within(cfg.tolerances.kl_ratio),
            trials,
        ),
    ])
}

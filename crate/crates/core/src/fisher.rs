//! Fisher information, KL divergence and Fisher arc length.
//!
//! Expectations over observations are empirical averages over the dataset;
//! expectations over hypotheses are taken under the model's own predictive
//! distribution P_θ(· | o), either by exact enumeration of the K classes or by
//! Monte-Carlo sampling.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::prob_model::{sample_from_probs, Dataset, Hypothesis, ModelSpec, ParamPoint, TangentVector};
use crate::quadrature::GaussLegendre;
use crate::taylor::LineSegmentCurve;

/// Default number of Gauss–Legendre nodes for arc-length integrals.
pub const DEFAULT_ARC_NODES: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum FisherKind {
    Exact,
    MonteCarlo { sample_count: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct FisherMatrix {
    matrix: DMatrix<f64>,
    kind: FisherKind,
}

impl FisherMatrix {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.matrix
    }

    pub fn kind(&self) -> FisherKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }
}

fn check_inputs(model: &ModelSpec, theta: &ParamPoint, data: &Dataset) -> Result<()> {
    check_dim("parameter point", model.param_dim(), theta.dim())?;
    data.check_compatible(model)
}

/// (1/n) Σᵢ Σₕ P_θ(h|oᵢ) · s sᵀ with s = score(θ, oᵢ, h).
pub fn exact_fisher(model: &ModelSpec, theta: &ParamPoint, data: &Dataset) -> Result<FisherMatrix> {
    check_inputs(model, theta, data)?;
    let dim = model.param_dim();
    let mut acc = DMatrix::zeros(dim, dim);
    for o in data.observations() {
        let (probs, scores) = model.scores_and_probs(theta, o);
        for (p, s) in probs.iter().zip(&scores) {
            acc.ger(*p, s, s, 1.0);
        }
    }
    acc /= data.len() as f64;
    Ok(FisherMatrix {
        matrix: acc,
        kind: FisherKind::Exact,
    })
}

/// Outer-product average with hypotheses sampled from the model,
/// `draws_per_obs` samples per observation.
pub fn mc_fisher<R: Rng + ?Sized>(
    model: &ModelSpec,
    theta: &ParamPoint,
    data: &Dataset,
    draws_per_obs: usize,
    rng: &mut R,
) -> Result<FisherMatrix> {
    check_inputs(model, theta, data)?;
    if draws_per_obs == 0 {
        return Err(Error::InvalidArgument("draws_per_obs must be at least 1".into()));
    }
    let dim = model.param_dim();
    let mut acc = DMatrix::zeros(dim, dim);
    let mut counts = vec![0usize; model.class_count()];
    for o in data.observations() {
        let (probs, scores) = model.scores_and_probs(theta, o);
        counts.iter_mut().for_each(|c| *c = 0);
        for _ in 0..draws_per_obs {
            counts[sample_from_probs(&probs, rng).0] += 1;
        }
        // identical draws contribute identical outer products
        for (count, s) in counts.iter().zip(&scores) {
            if *count > 0 {
                acc.ger(*count as f64, s, s, 1.0);
            }
        }
    }
    let sample_count = draws_per_obs * data.len();
    acc /= sample_count as f64;
    Ok(FisherMatrix {
        matrix: acc,
        kind: FisherKind::MonteCarlo { sample_count },
    })
}

/// (1/n) Σᵢ Σₕ P_θ(h|oᵢ) · ∇² log P_θ(h|oᵢ).
pub fn expected_hessian(model: &ModelSpec, theta: &ParamPoint, data: &Dataset) -> Result<DMatrix<f64>> {
    check_inputs(model, theta, data)?;
    let dim = model.param_dim();
    let mut acc = DMatrix::zeros(dim, dim);
    for o in data.observations() {
        let probs = model.probs_for(theta, o);
        for (h, p) in probs.iter().enumerate() {
            let hess = model.log_prob_hessian(theta, o, Hypothesis(h))?;
            acc += hess * *p;
        }
    }
    Ok(acc / data.len() as f64)
}

/// Mean over observations of KL(P_θ(·|o) ‖ P_θ₂(·|o)), by exact enumeration.
pub fn kl_exact(
    model: &ModelSpec,
    theta: &ParamPoint,
    theta2: &ParamPoint,
    data: &Dataset,
) -> Result<f64> {
    check_inputs(model, theta, data)?;
    check_dim("parameter point", model.param_dim(), theta2.dim())?;
    let mut total = 0.0;
    for o in data.observations() {
        let lp = model.log_probs_for(theta, o);
        let lq = model.log_probs_for(theta2, o);
        let term: f64 = lp
            .iter()
            .zip(&lq)
            .map(|(a, b)| a.exp() * (a - b))
            .sum();
        // Gibbs' inequality; clamp rounding below zero
        total += term.max(0.0);
    }
    let kl = total / data.len() as f64;
    if kl.is_finite() {
        Ok(kl)
    } else {
        Err(Error::NonFinite("KL divergence"))
    }
}

/// ½ ΔθᵀIΔθ.
pub fn kl_quadratic(fisher: &DMatrix<f64>, step: &TangentVector) -> Result<f64> {
    check_dim("tangent vector", fisher.nrows(), step.dim())?;
    let d = step.as_vector();
    Ok(0.5 * d.dot(&(fisher * d)))
}

/// Maximum over observations of the total-variation distance between the two
/// predictive distributions.
pub fn max_total_variation(
    model: &ModelSpec,
    theta: &ParamPoint,
    theta2: &ParamPoint,
    data: &Dataset,
) -> Result<f64> {
    check_inputs(model, theta, data)?;
    check_dim("parameter point", model.param_dim(), theta2.dim())?;
    Ok(data
        .observations()
        .iter()
        .map(|o| {
            let p = model.probs_for(theta, o);
            let q = model.probs_for(theta2, o);
            0.5 * p.iter().zip(&q).map(|(a, b)| (a - b).abs()).sum::<f64>()
        })
        .fold(0.0, f64::max))
}

/// ∫₀¹ sqrt(Δθᵀ G(c(t)) Δθ) dt for an arbitrary metric field G.
pub fn arc_length<G>(curve: &LineSegmentCurve, nodes: usize, mut metric: G) -> Result<f64>
where
    G: FnMut(&ParamPoint) -> Result<DMatrix<f64>>,
{
    let d: &DVector<f64> = curve.offset().as_vector();
    if d.iter().all(|v| *v == 0.0) {
        return Err(Error::DegenerateCurve);
    }
    let rule = GaussLegendre::new(nodes)?;
    let length = rule.try_integrate(0.0, 1.0, |t| {
        let g = metric(&curve.at(t))?;
        check_dim("metric", d.len(), g.nrows())?;
        // PSD up to rounding
        Ok(d.dot(&(&g * d)).max(0.0).sqrt())
    })?;
    if length.is_finite() {
        Ok(length)
    } else {
        Err(Error::NonFinite("arc length"))
    }
}

/// Arc length of a segment under the exact Fisher metric.
pub fn fisher_arc_length(
    model: &ModelSpec,
    curve: &LineSegmentCurve,
    data: &Dataset,
    nodes: usize,
) -> Result<f64> {
    check_dim("curve", model.param_dim(), curve.anchor().dim())?;
    arc_length(curve, nodes, |at| {
        exact_fisher(model, at, data).map(FisherMatrix::into_matrix)
    })
}

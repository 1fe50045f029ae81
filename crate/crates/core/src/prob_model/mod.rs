//! Discriminative probabilistic models P_θ(h | o) over a finite hypothesis set.
//!
//! Two families are provided:
//!
//! * **binary logistic**: θ ∈ ℝᵈ, P(h = 1 | o) = σ(θ·x).
//! * **softmax**: θ holds K class-weight blocks of length d laid out
//!   contiguously (block k occupies `k*d .. (k+1)*d`), and
//!   P(h = k | o) ∝ exp(w_k·x). The full K-block parameterization is kept on
//!   purpose, so the Fisher matrix has a non-trivial kernel (adding the same
//!   vector to every block leaves the predictive distribution unchanged).
//!
//! Log-probabilities go through log-sum-exp so that probabilities remain
//! strictly positive and normalized in floating point for moderate logits.

mod dataset;
mod point;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

pub use dataset::Dataset;
pub use point::{ParamPoint, TangentVector};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Observation(DVector<f64>);

impl Observation {
    pub fn new(features: DVector<f64>) -> Result<Self> {
        if features.iter().all(|x| x.is_finite()) {
            Ok(Self(features))
        } else {
            Err(Error::NonFinite("observation"))
        }
    }

    pub fn from_slice(features: &[f64]) -> Result<Self> {
        Self::new(DVector::from_column_slice(features))
    }

    pub fn features(&self) -> &DVector<f64> {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Hypothesis(pub usize);

impl Hypothesis {
    pub fn label(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    BinaryLogistic,
    Softmax,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    family: Family,
    feature_dim: usize,
    class_count: usize,
}

/// ln(1 + eˣ) without overflow.
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

impl ModelSpec {
    pub fn binary_logistic(feature_dim: usize) -> Result<Self> {
        Self::new(Family::BinaryLogistic, feature_dim, 2)
    }

    pub fn softmax(feature_dim: usize, class_count: usize) -> Result<Self> {
        Self::new(Family::Softmax, feature_dim, class_count)
    }

    pub fn new(family: Family, feature_dim: usize, class_count: usize) -> Result<Self> {
        if feature_dim == 0 {
            return Err(Error::InvalidArgument("feature_dim must be at least 1".into()));
        }
        match family {
            Family::BinaryLogistic if class_count != 2 => Err(Error::InvalidArgument(format!(
                "binary-logistic requires class_count = 2, got {class_count}"
            ))),
            Family::Softmax if class_count < 2 => Err(Error::InvalidArgument(format!(
                "softmax requires class_count >= 2, got {class_count}"
            ))),
            _ => Ok(Self {
                family,
                feature_dim,
                class_count,
            }),
        }
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn param_dim(&self) -> usize {
        match self.family {
            Family::BinaryLogistic => self.feature_dim,
            Family::Softmax => self.feature_dim * self.class_count,
        }
    }

    fn check_inputs(&self, theta: &ParamPoint, o: &Observation) -> Result<()> {
        check_dim("parameter point", self.param_dim(), theta.dim())?;
        check_dim("observation", self.feature_dim, o.dim())
    }

    fn check_label(&self, h: Hypothesis) -> Result<()> {
        if h.0 < self.class_count {
            Ok(())
        } else {
            Err(Error::LabelOutOfRange {
                label: h.0,
                classes: self.class_count,
            })
        }
    }

    /// Log-probabilities of every hypothesis, indexed by label.
    pub fn log_probabilities(&self, theta: &ParamPoint, o: &Observation) -> Result<Vec<f64>> {
        self.check_inputs(theta, o)?;
        Ok(self.log_probs_unchecked(theta, o))
    }

    fn log_probs_unchecked(&self, theta: &ParamPoint, o: &Observation) -> Vec<f64> {
        let x = o.features();
        match self.family {
            Family::BinaryLogistic => {
                let z = theta.dot(x);
                vec![-softplus(z), -softplus(-z)]
            }
            Family::Softmax => {
                let d = self.feature_dim;
                let logits: Vec<f64> = (0..self.class_count)
                    .map(|k| theta.rows(k * d, d).dot(x))
                    .collect();
                let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
                logits.into_iter().map(|z| z - lse).collect()
            }
        }
    }

    /// P_θ(h | o) for every hypothesis.
    pub fn probabilities(&self, theta: &ParamPoint, o: &Observation) -> Result<Vec<f64>> {
        self.check_inputs(theta, o)?;
        Ok(self.probs_unchecked(theta, o))
    }

    fn probs_unchecked(&self, theta: &ParamPoint, o: &Observation) -> Vec<f64> {
        self.log_probs_unchecked(theta, o)
            .into_iter()
            .map(f64::exp)
            .collect()
    }

    pub fn log_prob(&self, theta: &ParamPoint, o: &Observation, h: Hypothesis) -> Result<f64> {
        self.check_inputs(theta, o)?;
        self.check_label(h)?;
        Ok(self.log_probs_unchecked(theta, o)[h.0])
    }

    /// ∇_θ log P_θ(h | o).
    pub fn score(&self, theta: &ParamPoint, o: &Observation, h: Hypothesis) -> Result<TangentVector> {
        self.check_inputs(theta, o)?;
        self.check_label(h)?;
        let probs = self.probs_unchecked(theta, o);
        Ok(TangentVector::raw(self.score_from_probs(&probs, o, h)))
    }

    fn score_from_probs(&self, probs: &[f64], o: &Observation, h: Hypothesis) -> DVector<f64> {
        let x = o.features();
        match self.family {
            Family::BinaryLogistic => {
                let target = if h.0 == 1 { 1.0 } else { 0.0 };
                x * (target - probs[1])
            }
            Family::Softmax => {
                let d = self.feature_dim;
                let mut out = DVector::zeros(self.param_dim());
                for (k, p) in probs.iter().enumerate() {
                    let coeff = if k == h.0 { 1.0 - p } else { -p };
                    out.rows_mut(k * d, d).copy_from(&(x * coeff));
                }
                out
            }
        }
    }

    /// ∇²_θ log P_θ(h | o). For both families the result does not depend on
    /// `h`; the label is only validated.
    pub fn log_prob_hessian(
        &self,
        theta: &ParamPoint,
        o: &Observation,
        h: Hypothesis,
    ) -> Result<DMatrix<f64>> {
        self.check_inputs(theta, o)?;
        self.check_label(h)?;
        let probs = self.probs_unchecked(theta, o);
        Ok(self.hessian_from_probs(&probs, o))
    }

    pub(crate) fn hessian_from_probs(&self, probs: &[f64], o: &Observation) -> DMatrix<f64> {
        let x = o.features();
        let xxt = x * x.transpose();
        match self.family {
            Family::BinaryLogistic => xxt * (-(probs[0] * probs[1])),
            Family::Softmax => {
                let d = self.feature_dim;
                let k_count = self.class_count;
                let mut out = DMatrix::zeros(self.param_dim(), self.param_dim());
                for k in 0..k_count {
                    for l in 0..k_count {
                        let delta = if k == l { probs[k] } else { 0.0 };
                        let coeff = -(delta - probs[k] * probs[l]);
                        out.view_mut((k * d, l * d), (d, d))
                            .copy_from(&(&xxt * coeff));
                    }
                }
                out
            }
        }
    }

    /// Draws h ~ P_θ(· | o) by inverse-CDF over the class probabilities.
    pub fn sample_h<R: Rng + ?Sized>(
        &self,
        theta: &ParamPoint,
        o: &Observation,
        rng: &mut R,
    ) -> Result<Hypothesis> {
        self.check_inputs(theta, o)?;
        let probs = self.probs_unchecked(theta, o);
        Ok(sample_from_probs(&probs, rng))
    }

    /// Mean negative log-likelihood F(θ) = −(1/n) Σᵢ log P_θ(hᵢ | oᵢ).
    pub fn nll_loss(&self, theta: &ParamPoint, data: &Dataset) -> Result<f64> {
        data.check_compatible(self)?;
        check_dim("parameter point", self.param_dim(), theta.dim())?;
        let total: f64 = data
            .iter()
            .map(|(o, h)| self.log_probs_unchecked(theta, o)[h.0])
            .sum();
        let loss = -total / data.len() as f64;
        if loss.is_finite() {
            Ok(loss)
        } else {
            Err(Error::NonFinite("loss"))
        }
    }

    /// ∇F(θ) = −(1/n) Σᵢ score(θ, oᵢ, hᵢ).
    pub fn nll_grad(&self, theta: &ParamPoint, data: &Dataset) -> Result<TangentVector> {
        data.check_compatible(self)?;
        check_dim("parameter point", self.param_dim(), theta.dim())?;
        let mut acc = DVector::zeros(self.param_dim());
        for (o, h) in data.iter() {
            let probs = self.probs_unchecked(theta, o);
            acc += self.score_from_probs(&probs, o, h);
        }
        TangentVector::new(acc / -(data.len() as f64))
    }

    /// Analytic Hessian of the mean negative log-likelihood.
    pub fn nll_hessian(&self, theta: &ParamPoint, data: &Dataset) -> Result<DMatrix<f64>> {
        data.check_compatible(self)?;
        check_dim("parameter point", self.param_dim(), theta.dim())?;
        let mut acc = DMatrix::zeros(self.param_dim(), self.param_dim());
        for (o, _) in data.iter() {
            let probs = self.probs_unchecked(theta, o);
            acc += self.hessian_from_probs(&probs, o);
        }
        Ok(acc / -(data.len() as f64))
    }

    pub(crate) fn scores_and_probs(
        &self,
        theta: &ParamPoint,
        o: &Observation,
    ) -> (Vec<f64>, Vec<DVector<f64>>) {
        let probs = self.probs_unchecked(theta, o);
        let scores = (0..self.class_count)
            .map(|h| self.score_from_probs(&probs, o, Hypothesis(h)))
            .collect();
        (probs, scores)
    }

    pub(crate) fn probs_for(&self, theta: &ParamPoint, o: &Observation) -> Vec<f64> {
        self.probs_unchecked(theta, o)
    }

    pub(crate) fn log_probs_for(&self, theta: &ParamPoint, o: &Observation) -> Vec<f64> {
        self.log_probs_unchecked(theta, o)
    }
}

/// One inverse-CDF draw; consumes exactly one uniform from `rng`.
pub(crate) fn sample_from_probs<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> Hypothesis {
    Hypothesis(inverse_cdf(probs, rng.random::<f64>()))
}

fn inverse_cdf(probs: &[f64], u: f64) -> usize {
    let mut cumulative = 0.0;
    let mut last_positive = 0;
    for (k, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            last_positive = k;
        }
        cumulative += p;
        if u < cumulative {
            return k;
        }
    }
    // u landed above the rounded total mass
    last_positive
}

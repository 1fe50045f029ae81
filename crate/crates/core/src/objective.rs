//! Smooth scalar objectives F(θ) with first and (optionally) second derivatives.

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, Error, Result};
use crate::prob_model::{Dataset, ModelSpec, ParamPoint, TangentVector};

pub trait Objective {
    fn dim(&self) -> usize;

    fn value(&self, theta: &ParamPoint) -> Result<f64>;

    fn gradient(&self, theta: &ParamPoint) -> Result<TangentVector>;

    /// Analytic Hessian, when the objective has one.
    fn hessian(&self, _theta: &ParamPoint) -> Option<Result<DMatrix<f64>>> {
        None
    }
}

/// Mean negative log-likelihood of a model on a dataset.
#[derive(Debug, Clone, Copy)]
pub struct NllObjective<'a> {
    pub model: &'a ModelSpec,
    pub data: &'a Dataset,
}

impl<'a> NllObjective<'a> {
    pub fn new(model: &'a ModelSpec, data: &'a Dataset) -> Result<Self> {
        data.check_compatible(model)?;
        Ok(Self { model, data })
    }
}

impl Objective for NllObjective<'_> {
    fn dim(&self) -> usize {
        self.model.param_dim()
    }

    fn value(&self, theta: &ParamPoint) -> Result<f64> {
        self.model.nll_loss(theta, self.data)
    }

    fn gradient(&self, theta: &ParamPoint) -> Result<TangentVector> {
        self.model.nll_grad(theta, self.data)
    }

    fn hessian(&self, theta: &ParamPoint) -> Option<Result<DMatrix<f64>>> {
        Some(self.model.nll_hessian(theta, self.data))
    }
}

/// F(θ) = ½ θᵀAθ + bᵀθ + c with A symmetric.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticObjective {
    a: DMatrix<f64>,
    b: DVector<f64>,
    c: f64,
}

impl QuadraticObjective {
    pub fn new(a: DMatrix<f64>, b: DVector<f64>, c: f64) -> Result<Self> {
        if !a.is_square() {
            return Err(Error::InvalidArgument("quadratic form must be square".into()));
        }
        check_dim("linear term", a.nrows(), b.len())?;
        if a.iter().chain(b.iter()).any(|v| !v.is_finite()) || !c.is_finite() {
            return Err(Error::NonFinite("quadratic objective"));
        }
        if (&a - a.transpose()).amax() > 1e-12 * (1.0 + a.amax()) {
            return Err(Error::InvalidArgument("quadratic form must be symmetric".into()));
        }
        Ok(Self { a, b, c })
    }

    /// ½ (θ − centre)ᵀ(θ − centre).
    pub fn centred(centre: &DVector<f64>) -> Result<Self> {
        let n = centre.len();
        Self::new(DMatrix::identity(n, n), -centre, 0.5 * centre.dot(centre))
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.a
    }
}

impl Objective for QuadraticObjective {
    fn dim(&self) -> usize {
        self.b.len()
    }

    fn value(&self, theta: &ParamPoint) -> Result<f64> {
        check_dim("parameter point", self.dim(), theta.dim())?;
        let t = theta.as_vector();
        Ok(0.5 * t.dot(&(&self.a * t)) + self.b.dot(t) + self.c)
    }

    fn gradient(&self, theta: &ParamPoint) -> Result<TangentVector> {
        check_dim("parameter point", self.dim(), theta.dim())?;
        TangentVector::new(&self.a * theta.as_vector() + &self.b)
    }

    fn hessian(&self, theta: &ParamPoint) -> Option<Result<DMatrix<f64>>> {
        Some(check_dim("parameter point", self.dim(), theta.dim()).map(|_| self.a.clone()))
    }
}

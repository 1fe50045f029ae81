//! Parameter-space points and tangent offsets.
//!
//! Both wrap a dense `DVector<f64>` with the same coordinates; the distinction
//! is one of role. A [`ParamPoint`] is a location θ, a [`TangentVector`] is a
//! candidate step Δθ attached to some θ. Constructors reject non-finite entries.

use std::ops::Deref;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

fn ensure_finite(what: &'static str, v: &DVector<f64>) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamPoint(DVector<f64>);

impl ParamPoint {
    pub fn new(coords: DVector<f64>) -> Result<Self> {
        ensure_finite("parameter point", &coords)?;
        Ok(Self(coords))
    }

    pub fn from_slice(coords: &[f64]) -> Result<Self> {
        Self::new(DVector::from_column_slice(coords))
    }

    pub fn zeros(dim: usize) -> Self {
        Self(DVector::zeros(dim))
    }

    pub(crate) fn raw(coords: DVector<f64>) -> Self {
        Self(coords)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_vector(&self) -> &DVector<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DVector<f64> {
        self.0
    }

    /// θ + Δθ.
    pub fn offset(&self, step: &TangentVector) -> Result<Self> {
        check_dim("tangent vector", self.dim(), step.dim())?;
        Self::new(&self.0 + &step.0)
    }

    /// The displacement `other − self`.
    pub fn displacement_to(&self, other: &ParamPoint) -> Result<TangentVector> {
        check_dim("parameter point", self.dim(), other.dim())?;
        TangentVector::new(&other.0 - &self.0)
    }
}

impl Deref for ParamPoint {
    type Target = DVector<f64>;

    fn deref(&self) -> &Self::Target {
        &self.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TangentVector(DVector<f64>);

impl TangentVector {
    pub fn new(coords: DVector<f64>) -> Result<Self> {
        ensure_finite("tangent vector", &coords)?;
        Ok(Self(coords))
    }

    pub fn from_slice(coords: &[f64]) -> Result<Self> {
        Self::new(DVector::from_column_slice(coords))
    }

    pub fn zeros(dim: usize) -> Self {
        Self(DVector::zeros(dim))
    }

    pub(crate) fn raw(coords: DVector<f64>) -> Self {
        Self(coords)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_vector(&self) -> &DVector<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DVector<f64> {
        self.0
    }

    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(&self.0 * factor)
    }
}

impl Deref for TangentVector {
    type Target = DVector<f64>;

    fn deref(&self) -> &Self::Target {
        &self.0
    }
}

//! Conjugate gradient with a full iteration record.
//!
//! ```text
//! x₀ = 0, r₀ = b, p₀ = r₀
//! αₖ = rₖᵀrₖ / pₖᵀApₖ
//! xₖ₊₁ = xₖ + αₖpₖ,  rₖ₊₁ = rₖ − αₖApₖ
//! βₖ = rₖ₊₁ᵀrₖ₊₁ / rₖᵀrₖ,  pₖ₊₁ = rₖ₊₁ + βₖpₖ
//! ```
//!
//! Starting from zero makes the Krylov space begin at b itself. Every residual
//! and search direction is kept so that conjugacy and the split of the residual
//! between subspaces can be inspected afterwards.
//!
//! In floating point the short recurrence slowly loses conjugacy between
//! distant directions. Each new direction is therefore A-orthogonalized
//! against the stored history (two modified Gram–Schmidt passes), which
//! changes nothing in exact arithmetic and keeps the recorded directions
//! conjugate to working precision.

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, Error, Result};
use crate::metric::DampedMetric;
use crate::prob_model::TangentVector;

/// A symmetric linear map on ℝᴰ.
pub trait LinearOperator {
    fn dim(&self) -> usize;

    fn apply(&self, v: &DVector<f64>) -> DVector<f64>;
}

impl LinearOperator for DMatrix<f64> {
    fn dim(&self) -> usize {
        self.nrows()
    }

    fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        self * v
    }
}

impl LinearOperator for DampedMetric {
    fn dim(&self) -> usize {
        DampedMetric::dim(self)
    }

    fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        self.matvec(v).expect("dimension checked by caller")
    }
}

/// The identity on ℝᴰ; under this metric natural gradient is plain gradient
/// descent.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IdentityOperator(pub usize);

impl LinearOperator for IdentityOperator {
    fn dim(&self) -> usize {
        self.0
    }

    fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        v.clone()
    }
}

impl<T: LinearOperator + ?Sized> LinearOperator for &T {
    fn dim(&self) -> usize {
        (**self).dim()
    }

    fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        (**self).apply(v)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CgTrace {
    pub solution: TangentVector,
    /// ‖rₖ‖ for k = 0..=iterations; entry 0 is ‖b‖.
    pub residual_norms: Vec<f64>,
    /// rₖ for k = 0..=iterations.
    pub residuals: Vec<DVector<f64>>,
    /// pₖ for k = 0..iterations.
    pub search_directions: Vec<TangentVector>,
    pub iterations: usize,
    pub converged: bool,
}

impl CgTrace {
    pub fn final_residual_norm(&self) -> f64 {
        *self.residual_norms.last().expect("trace holds the initial residual")
    }
}

/// Solves A x = b until ‖rₖ‖ ≤ tol·‖b‖ or `max_iter` iterations. Running out of
/// iterations returns an unconverged trace; a non-finite iterate or a
/// non-positive curvature pᵀAp is an error.
pub fn conjugate_gradient<A: LinearOperator + ?Sized>(
    op: &A,
    b: &TangentVector,
    tol: f64,
    max_iter: usize,
) -> Result<CgTrace> {
    check_dim("right-hand side", op.dim(), b.dim())?;
    if !(tol >= 0.0 && tol.is_finite()) {
        return Err(Error::InvalidArgument(format!("CG tolerance must be >= 0, got {tol}")));
    }
    let n = b.dim();
    let b_norm = b.norm();
    let mut x = DVector::zeros(n);
    let mut r = b.as_vector().clone();
    let mut p = r.clone();
    let mut rr = r.dot(&r);

    let mut trace = CgTrace {
        solution: TangentVector::zeros(n),
        residual_norms: vec![b_norm],
        residuals: vec![r.clone()],
        search_directions: Vec::new(),
        iterations: 0,
        converged: b_norm == 0.0,
    };
    if trace.converged {
        return Ok(trace);
    }
    let target = tol * b_norm;
    // (pⱼ, Apⱼ, pⱼᵀApⱼ) for re-conjugation
    let mut history: Vec<(DVector<f64>, DVector<f64>, f64)> = Vec::new();

    for _ in 0..max_iter {
        let ap = op.apply(&p);
        check_dim("operator output", n, ap.len())?;
        let curvature = p.dot(&ap);
        if !curvature.is_finite() {
            return Err(Error::NonFinite("CG curvature"));
        }
        if curvature <= 0.0 {
            return Err(Error::NotPositiveDefinite(format!(
                "CG met pᵀAp = {curvature:e} at iteration {}",
                trace.iterations
            )));
        }
        let alpha = r.dot(&p) / curvature;
        x.axpy(alpha, &p, 1.0);
        r.axpy(-alpha, &ap, 1.0);
        if x.iter().chain(r.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("CG iterate"));
        }
        trace.search_directions.push(TangentVector::raw(p.clone()));
        trace.iterations += 1;
        history.push((p.clone(), ap, curvature));

        let rr_next = r.dot(&r);
        let r_norm = rr_next.sqrt();
        trace.residual_norms.push(r_norm);
        trace.residuals.push(r.clone());
        if r_norm <= target {
            trace.converged = true;
            break;
        }
        let beta = rr_next / rr;
        p = &r + &p * beta;
        for _ in 0..2 {
            for (pj, apj, cj) in &history {
                let coef = p.dot(apj) / cj;
                p.axpy(-coef, pj, 1.0);
            }
        }
        rr = rr_next;
    }
    trace.solution = TangentVector::raw(x);
    Ok(trace)
}

/// Residual split between the image and kernel partitions of a damped metric.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SubspaceResidual {
    pub iteration: usize,
    pub image: f64,
    pub kernel: f64,
}

/// ‖project_image(rₖ)‖ and ‖project_kernel(rₖ)‖ for every recorded residual.
pub fn cg_subspace_diagnostics(trace: &CgTrace, metric: &DampedMetric) -> Result<Vec<SubspaceResidual>> {
    trace
        .residuals
        .iter()
        .enumerate()
        .map(|(iteration, r)| {
            Ok(SubspaceResidual {
                iteration,
                image: metric.project_image(r)?.norm(),
                kernel: metric.project_kernel(r)?.norm(),
            })
        })
        .collect()
}

/// First iteration at which the selected residual component drops to at most
/// `fraction` of its initial value.
pub fn first_drop_below(
    diagnostics: &[SubspaceResidual],
    component: impl Fn(&SubspaceResidual) -> f64,
    fraction: f64,
) -> Option<usize> {
    let initial = component(diagnostics.first()?);
    diagnostics
        .iter()
        .find(|d| component(d) <= fraction * initial)
        .map(|d| d.iteration)
}

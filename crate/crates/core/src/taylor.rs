//! Second-order local models of a smooth objective.
//!
//! The quadratic model at θₖ is
//!
//! ```text
//! q(Δθ) = F(θₖ) + ⟨Δθ, ∇F(θₖ)⟩ + ½ ΔθᵀHΔθ
//! ```
//!
//! The same expansion can be reached by applying the fundamental theorem of
//! calculus along the segment c(t) = θₖ + tΔθ. [`ftc_first_order`] and
//! [`ftc_second_order`] evaluate those line integrals with Gauss–Legendre
//! quadrature; both reconstruct F(θₖ + Δθ) exactly up to quadrature error,
//! while freezing the Hessian at t = 0 recovers q(Δθ).

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{check_dim, Error, Result};
use crate::objective::Objective;
use crate::prob_model::{ParamPoint, TangentVector};
use crate::quadrature::GaussLegendre;

/// Entrywise symmetry tolerance for curvature matrices.
pub const SYMMETRY_TOL: f64 = 1e-10;

/// Default trust radius ‖Δθ‖ within which the quadratic model is trusted.
pub const DEFAULT_TRUST_RADIUS: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HessianMode {
    Analytic,
    FiniteDifference,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticModel {
    base_value: f64,
    gradient: TangentVector,
    curvature: DMatrix<f64>,
}

impl QuadraticModel {
    pub fn new(base_value: f64, gradient: TangentVector, curvature: DMatrix<f64>) -> Result<Self> {
        if !curvature.is_square() {
            return Err(Error::InvalidArgument("curvature must be square".into()));
        }
        check_dim("gradient", curvature.nrows(), gradient.dim())?;
        if !base_value.is_finite() {
            return Err(Error::NonFinite("base value"));
        }
        if curvature.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("curvature"));
        }
        if (&curvature - curvature.transpose()).amax() > SYMMETRY_TOL {
            return Err(Error::InvalidArgument("curvature is not symmetric".into()));
        }
        Ok(Self {
            base_value,
            gradient,
            curvature,
        })
    }

    pub fn dim(&self) -> usize {
        self.gradient.dim()
    }

    pub fn base_value(&self) -> f64 {
        self.base_value
    }

    pub fn gradient(&self) -> &TangentVector {
        &self.gradient
    }

    pub fn curvature(&self) -> &DMatrix<f64> {
        &self.curvature
    }

    /// q(Δθ) = F + ⟨Δθ, ∇F⟩ + ½ ΔθᵀHΔθ.
    pub fn eval(&self, step: &TangentVector) -> Result<f64> {
        check_dim("tangent vector", self.dim(), step.dim())?;
        let d = step.as_vector();
        Ok(self.base_value + d.dot(self.gradient.as_vector()) + 0.5 * d.dot(&(&self.curvature * d)))
    }
}

/// The segment c(t) = anchor + t·offset, t ∈ [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct LineSegmentCurve {
    anchor: ParamPoint,
    offset: TangentVector,
}

impl LineSegmentCurve {
    pub fn new(anchor: ParamPoint, offset: TangentVector) -> Result<Self> {
        check_dim("curve offset", anchor.dim(), offset.dim())?;
        Ok(Self { anchor, offset })
    }

    pub fn anchor(&self) -> &ParamPoint {
        &self.anchor
    }

    pub fn offset(&self) -> &TangentVector {
        &self.offset
    }

    pub fn at(&self, t: f64) -> ParamPoint {
        if t == 0.0 {
            return self.anchor.clone();
        }
        ParamPoint::raw(self.anchor.as_vector() + self.offset.as_vector() * t)
    }
}

/// Central-difference step used for finite-difference Hessians:
/// ε^{1/3} · max(1, |θᵢ|).
pub fn fd_step(coord: f64) -> f64 {
    f64::EPSILON.cbrt() * coord.abs().max(1.0)
}

/// Hessian by central differences of the gradient, symmetrized as (H + Hᵀ)/2.
pub fn finite_difference_hessian<F: Objective + ?Sized>(
    objective: &F,
    theta: &ParamPoint,
) -> Result<DMatrix<f64>> {
    let n = objective.dim();
    check_dim("parameter point", n, theta.dim())?;
    let mut h = DMatrix::zeros(n, n);
    for j in 0..n {
        let step = fd_step(theta[j]);
        let mut plus = theta.as_vector().clone();
        let mut minus = theta.as_vector().clone();
        plus[j] += step;
        minus[j] -= step;
        let actual = plus[j] - minus[j];
        let gp = objective.gradient(&ParamPoint::new(plus)?)?;
        let gm = objective.gradient(&ParamPoint::new(minus)?)?;
        h.set_column(j, &((gp.as_vector() - gm.as_vector()) / actual));
    }
    Ok((&h + h.transpose()) * 0.5)
}

fn hessian_at<F: Objective + ?Sized>(
    objective: &F,
    theta: &ParamPoint,
    mode: HessianMode,
) -> Result<DMatrix<f64>> {
    match mode {
        HessianMode::Analytic => objective
            .hessian(theta)
            .ok_or(Error::Unsupported("an analytic Hessian"))?,
        HessianMode::FiniteDifference => finite_difference_hessian(objective, theta),
    }
}

fn preferred_mode<F: Objective + ?Sized>(objective: &F, theta: &ParamPoint) -> HessianMode {
    if objective.hessian(theta).is_some() {
        HessianMode::Analytic
    } else {
        HessianMode::FiniteDifference
    }
}

/// (F(θₖ), ∇F(θₖ), H(θₖ)).
pub fn build_quadratic<F: Objective + ?Sized>(
    objective: &F,
    theta: &ParamPoint,
    mode: HessianMode,
) -> Result<QuadraticModel> {
    check_dim("parameter point", objective.dim(), theta.dim())?;
    let value = objective.value(theta)?;
    if !value.is_finite() {
        return Err(Error::NonFinite("objective value"));
    }
    let gradient = objective.gradient(theta)?;
    let mut curvature = hessian_at(objective, theta, mode)?;
    if mode == HessianMode::Analytic {
        // analytic Hessians can carry rounding asymmetry
        curvature = (&curvature + curvature.transpose()) * 0.5;
    }
    QuadraticModel::new(value, gradient, curvature)
}

pub fn eval_quadratic(model: &QuadraticModel, step: &TangentVector) -> Result<f64> {
    model.eval(step)
}

fn finite(what: &'static str, v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite(what))
    }
}

/// F(θₖ) + Σᵢ Δθᵢ ∫₀¹ ∂F/∂θᵢ(θₖ + tΔθ) dt.
pub fn ftc_first_order<F: Objective + ?Sized>(
    objective: &F,
    theta: &ParamPoint,
    step: &TangentVector,
    nodes: usize,
) -> Result<f64> {
    let curve = LineSegmentCurve::new(theta.clone(), step.clone())?;
    check_dim("parameter point", objective.dim(), theta.dim())?;
    let rule = GaussLegendre::new(nodes)?;
    let base = finite("objective value", objective.value(theta)?)?;
    let mut integrals = DVector::zeros(theta.dim());
    for (t, w) in rule.on_interval(0.0, 1.0) {
        let g = objective.gradient(&curve.at(t))?;
        integrals.axpy(w, g.as_vector(), 1.0);
    }
    finite("quadrature integrand", base + step.dot(&integrals))
}

/// F(θₖ) + ⟨Δθ, ∇F(θₖ)⟩ + ∫₀¹ ∫₀ᵗ ΔθᵀH(θₖ + sΔθ)Δθ ds dt.
///
/// Outer nodes cover t ∈ [0, 1]; for each outer node an inner rule with the
/// same node count covers s ∈ [0, t].
pub fn ftc_second_order<F: Objective + ?Sized>(
    objective: &F,
    theta: &ParamPoint,
    step: &TangentVector,
    nodes: usize,
) -> Result<f64> {
    second_order_expansion(objective, theta, step, nodes, false)
}

/// [`ftc_second_order`] with the inner Hessian frozen at s = 0; equals the
/// quadratic model up to rounding.
pub fn ftc_second_order_frozen<F: Objective + ?Sized>(
    objective: &F,
    theta: &ParamPoint,
    step: &TangentVector,
    nodes: usize,
) -> Result<f64> {
    second_order_expansion(objective, theta, step, nodes, true)
}

fn second_order_expansion<F: Objective + ?Sized>(
    objective: &F,
    theta: &ParamPoint,
    step: &TangentVector,
    nodes: usize,
    frozen: bool,
) -> Result<f64> {
    let curve = LineSegmentCurve::new(theta.clone(), step.clone())?;
    check_dim("parameter point", objective.dim(), theta.dim())?;
    let rule = GaussLegendre::new(nodes)?;
    let mode = preferred_mode(objective, theta);
    let base = finite("objective value", objective.value(theta)?)?;
    let grad = objective.gradient(theta)?;
    let d = step.as_vector();
    let quad_form = |at: &ParamPoint| -> Result<f64> {
        let h = hessian_at(objective, at, mode)?;
        finite("quadrature integrand", d.dot(&(&h * d)))
    };
    let frozen_value = if frozen { Some(quad_form(theta)?) } else { None };
    let mut second = 0.0;
    for (t, wt) in rule.on_interval(0.0, 1.0) {
        let mut inner = 0.0;
        for (s, ws) in rule.on_interval(0.0, t) {
            let v = match frozen_value {
                Some(v) => v,
                None => quad_form(&curve.at(s))?,
            };
            inner += ws * v;
        }
        second += wt * inner;
    }
    finite("quadrature integrand", base + d.dot(grad.as_vector()) + second)
}

/// |F(θₖ + Δθ) − q(Δθ)| using the analytic Hessian when available.
pub fn taylor_remainder<F: Objective + ?Sized>(
    objective: &F,
    theta: &ParamPoint,
    step: &TangentVector,
) -> Result<f64> {
    let model = build_quadratic(objective, theta, preferred_mode(objective, theta))?;
    if step.iter().all(|v| *v == 0.0) {
        return Ok(0.0);
    }
    let direct = objective.value(&theta.offset(step)?)?;
    Ok((direct - model.eval(step)?).abs())
}

/// Solves (H + λI)Δθ = −∇F, the minimizer of the regularized quadratic model.
pub fn newton_step(model: &QuadraticModel, regularizer: f64) -> Result<TangentVector> {
    if !(regularizer >= 0.0 && regularizer.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "regularizer must be finite and non-negative, got {regularizer}"
        )));
    }
    let n = model.dim();
    let system = model.curvature() + DMatrix::identity(n, n) * regularizer;
    let chol = Cholesky::new(system).ok_or_else(|| {
        Error::NotPositiveDefinite(format!(
            "Cholesky factorization of H + {regularizer}·I failed"
        ))
    })?;
    let rhs = -model.gradient().as_vector();
    TangentVector::new(chol.solve(&rhs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objective::{NllObjective, QuadraticObjective};
    use crate::prob_model::{Dataset, Hypothesis, ModelSpec, Observation};
    use approx::assert_abs_diff_eq;

    fn point(v: &[f64]) -> ParamPoint {
        ParamPoint::from_slice(v).unwrap()
    }

    fn tangent(v: &[f64]) -> TangentVector {
        TangentVector::from_slice(v).unwrap()
    }

    struct NoHessian(QuadraticObjective);

    impl Objective for NoHessian {
        fn dim(&self) -> usize {
            self.0.dim()
        }
        fn value(&self, t: &ParamPoint) -> Result<f64> {
            self.0.value(t)
        }
        fn gradient(&self, t: &ParamPoint) -> Result<TangentVector> {
            self.0.gradient(t)
        }
    }

    fn sym_a() -> DMatrix<f64> {
        DMatrix::from_row_slice(3, 3, &[4.0, 1.0, -0.5, 1.0, 3.0, 0.25, -0.5, 0.25, 2.0])
    }

    #[test]
    fn quadratic_is_its_own_model() {
        let f = QuadraticObjective::new(sym_a(), DVector::zeros(3), 0.0).unwrap();
        let at = point(&[0.3, -1.0, 2.0]);
        let exact = build_quadratic(&f, &at, HessianMode::Analytic).unwrap();
        assert_eq!(exact.curvature(), &sym_a());
        let fd = build_quadratic(&f, &at, HessianMode::FiniteDifference).unwrap();
        assert!((fd.curvature() - sym_a()).amax() <= 1e-5);
    }

    #[test]
    fn analytic_mode_requires_hessian() {
        let f = NoHessian(QuadraticObjective::new(sym_a(), DVector::zeros(3), 0.0).unwrap());
        assert!(matches!(
            build_quadratic(&f, &ParamPoint::zeros(3), HessianMode::Analytic),
            Err(Error::Unsupported(_))
        ));
        assert!(build_quadratic(&f, &ParamPoint::zeros(3), HessianMode::FiniteDifference).is_ok());
    }

    #[test]
    fn logistic_curvature_at_origin() {
        let model = ModelSpec::binary_logistic(2).unwrap();
        let data = Dataset::new(
            vec![Observation::from_slice(&[1.0, 0.0]).unwrap()],
            vec![Hypothesis(1)],
        )
        .unwrap();
        let f = NllObjective::new(&model, &data).unwrap();
        let q = build_quadratic(&f, &ParamPoint::zeros(2), HessianMode::Analytic).unwrap();
        let expected = DMatrix::from_row_slice(2, 2, &[0.25, 0.0, 0.0, 0.0]);
        assert_eq!(q.curvature(), &expected);
        let fd = build_quadratic(&f, &ParamPoint::zeros(2), HessianMode::FiniteDifference).unwrap();
        assert!((fd.curvature() - expected).amax() <= 1e-8);
    }

    #[test]
    fn constant_objective_has_flat_model() {
        let f = QuadraticObjective::new(DMatrix::zeros(2, 2), DVector::zeros(2), 3.5).unwrap();
        for mode in [HessianMode::Analytic, HessianMode::FiniteDifference] {
            let q = build_quadratic(&f, &point(&[1.0, 2.0]), mode).unwrap();
            assert_eq!(q.base_value(), 3.5);
            assert_eq!(q.gradient().amax(), 0.0);
            assert_eq!(q.curvature().amax(), 0.0);
        }
    }

    #[test]
    fn eval_examples() {
        let f = QuadraticObjective::new(DMatrix::identity(2, 2), DVector::zeros(2), 0.0).unwrap();
        let q = build_quadratic(&f, &ParamPoint::zeros(2), HessianMode::Analytic).unwrap();
        assert_eq!(q.eval(&TangentVector::zeros(2)).unwrap(), q.base_value());
        assert_eq!(eval_quadratic(&q, &tangent(&[3.0, 4.0])).unwrap(), 12.5);
        assert!(q.eval(&TangentVector::zeros(3)).is_err());
    }

    #[test]
    fn eval_odd_even_split() {
        let q = QuadraticModel::new(0.7, tangent(&[1.0, -2.0, 0.5]), sym_a()).unwrap();
        let d = tangent(&[0.3, 0.1, -0.4]);
        let neg = tangent(&[-0.3, -0.1, 0.4]);
        let diff = q.eval(&d).unwrap() - q.eval(&neg).unwrap();
        assert_abs_diff_eq!(diff, 2.0 * d.dot(q.gradient()), epsilon = 1e-15);
    }

    #[test]
    fn quadratic_model_rejects_asymmetry() {
        let mut h = sym_a();
        h[(0, 1)] += 1e-6;
        assert!(QuadraticModel::new(0.0, TangentVector::zeros(3), h).is_err());
    }

    #[test]
    fn ftc_first_order_polynomial() {
        // F(θ) = θ₁², ∫₀¹ 2t dt = 1
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 0.0]);
        let f = QuadraticObjective::new(a, DVector::zeros(2), 0.0).unwrap();
        let v = ftc_first_order(&f, &ParamPoint::zeros(2), &tangent(&[1.0, 0.0]), 5).unwrap();
        assert_abs_diff_eq!(v, 1.0, epsilon = 1e-15);
        let at = point(&[0.4, 0.2]);
        assert_eq!(
            ftc_first_order(&f, &at, &TangentVector::zeros(2), 5).unwrap(),
            f.value(&at).unwrap()
        );
    }

    #[test]
    fn ftc_second_order_quadratic_exact() {
        let f = QuadraticObjective::new(sym_a(), DVector::from_vec(vec![1.0, 0.0, -1.0]), 0.5)
            .unwrap();
        let at = point(&[0.1, 0.2, 0.3]);
        let d = tangent(&[0.5, -0.25, 1.0]);
        let direct = f.value(&at.offset(&d).unwrap()).unwrap();
        assert_abs_diff_eq!(ftc_second_order(&f, &at, &d, 2).unwrap(), direct, epsilon = 1e-13);
    }

    #[test]
    fn frozen_expansion_is_the_quadratic_model() {
        let f = QuadraticObjective::new(sym_a(), DVector::zeros(3), 0.0).unwrap();
        let at = point(&[0.1, 0.2, 0.3]);
        let d = tangent(&[0.5, -0.25, 1.0]);
        let q = build_quadratic(&f, &at, HessianMode::Analytic).unwrap();
        let frozen = ftc_second_order_frozen(&f, &at, &d, 4).unwrap();
        assert_abs_diff_eq!(frozen, q.eval(&d).unwrap(), epsilon = 1e-12);
    }

    #[test]
    fn remainder_vanishes_for_quadratics_and_zero_step() {
        let f = QuadraticObjective::new(sym_a(), DVector::zeros(3), 1.0).unwrap();
        let at = point(&[1.0, -1.0, 0.5]);
        assert!(taylor_remainder(&f, &at, &tangent(&[0.3, 0.3, -0.9])).unwrap() <= 1e-12);
        assert_eq!(taylor_remainder(&f, &at, &TangentVector::zeros(3)).unwrap(), 0.0);
    }

    #[test]
    fn newton_step_examples() {
        let a = DVector::from_vec(vec![1.5, -2.0]);
        let f = QuadraticObjective::centred(&a).unwrap();
        let q = build_quadratic(&f, &ParamPoint::zeros(2), HessianMode::Analytic).unwrap();
        let step = newton_step(&q, 0.0).unwrap();
        assert_abs_diff_eq!(step[0], 1.5, epsilon = 1e-15);
        assert_abs_diff_eq!(step[1], -2.0, epsilon = 1e-15);

        let flat = QuadraticModel::new(0.0, TangentVector::zeros(2), DMatrix::identity(2, 2)).unwrap();
        assert_eq!(newton_step(&flat, 0.0).unwrap().amax(), 0.0);

        // (2 0; 0 4) Δ = −(2, 2) by elimination: Δ = (−1, −½)
        let diag = QuadraticModel::new(
            0.0,
            tangent(&[2.0, 2.0]),
            DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 4.0])),
        )
        .unwrap();
        let s = newton_step(&diag, 0.0).unwrap();
        assert_abs_diff_eq!(s[0], -1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(s[1], -0.5, epsilon = 1e-15);
    }

    #[test]
    fn newton_step_rejects_singular_without_regularizer() {
        let q = QuadraticModel::new(
            0.0,
            tangent(&[1.0, 1.0]),
            DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.0])),
        )
        .unwrap();
        assert!(matches!(newton_step(&q, 0.0), Err(Error::NotPositiveDefinite(_))));
        assert!(newton_step(&q, 1e-3).is_ok());
        assert!(newton_step(&q, -1.0).is_err());
    }

    #[test]
    fn curve_endpoints() {
        let c = LineSegmentCurve::new(point(&[1.0, 2.0]), tangent(&[0.5, -0.5])).unwrap();
        assert_eq!(c.at(0.0), point(&[1.0, 2.0]));
        assert_eq!(c.at(1.0), point(&[1.5, 1.5]));
    }
}

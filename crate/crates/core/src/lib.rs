//! Tangent-space local models for discriminative probabilistic models.
//!
//! Gradient descent, Newton's method and natural gradient all pick a step Δθ
//! by minimizing a model of the objective in the tangent space at the current
//! iterate; they differ only in the inner product placed on that space. This
//! crate provides the pieces needed to build and cross-check those models:
//!
//! * [`prob_model`]: logistic and full-block softmax models with analytic
//!   log-probabilities, scores, Hessians and sampling
//! * [`taylor`]: quadratic models, quadrature reconstructions along segments,
//!   Newton steps
//! * [`fisher`]: exact and Monte-Carlo Fisher matrices, KL divergence, arc length
//! * [`metric`]: the damped positive-definite metric built from a
//!   rank-deficient Fisher matrix
//! * [`solver`]: instrumented conjugate gradient and the optimizer loops

pub mod error;
pub mod fisher;
pub mod matrix_io;
pub mod metric;
pub mod objective;
pub mod prob_model;
pub mod quadrature;
pub mod solver;
pub mod taylor;


pub use error::{Error, Result};
pub use objective::{NllObjective, Objective, QuadraticObjective};
pub use prob_model::{Dataset, Family, Hypothesis, ModelSpec, Observation, ParamPoint, TangentVector};

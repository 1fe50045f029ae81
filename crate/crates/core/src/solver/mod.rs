//! Instrumented conjugate gradient and the three optimizer loops.

pub mod cg;
mod optimizer;

pub use cg::{
    cg_subspace_diagnostics, conjugate_gradient, first_drop_below, CgTrace, IdentityOperator,
    LinearOperator, SubspaceResidual,
};
pub use optimizer::{
    gd_step, ng_step, read_trace, run_optimizer, FisherConfig, FisherEstimator, Method,
    OptimizerConfig, OptimizerRun, Problem, TraceRecord, DEFAULT_CG_TOL,
};

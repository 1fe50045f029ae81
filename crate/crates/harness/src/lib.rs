//! Experiment plumbing around `tangent-core`: configuration, synthetic data,
//! identity suites, optimizer comparisons and plot data.

pub mod checks;
pub mod config;
pub mod data;
pub mod experiment;
pub mod plot;

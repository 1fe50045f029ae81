//! Runs the configured optimizers side by side and writes traces plus a
//! summary.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::thread;

use anyhow::{Context, Result};
use log::info;
use serde::{Deserialize, Serialize};
use tangent_core::fisher::{fisher_arc_length, DEFAULT_ARC_NODES};
use tangent_core::solver::{run_optimizer, Method, OptimizerConfig, OptimizerRun};
use tangent_core::taylor::LineSegmentCurve;
use tangent_core::{Dataset, ModelSpec, NllObjective, ParamPoint};

use crate::checks::{dataset_checks, run_suites, Bound, CheckResult};
use crate::config::{ensure_writable, ExperimentConfig, MethodConfig};
use crate::data::{generate_dataset, theta_star};

pub const SUMMARY_FILE: &str = "summary.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    pub step_size: f64,
    pub trace_file: String,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub loss_curve: Vec<f64>,
    /// Sum of exact-Fisher arc lengths of the segments between iterates.
    pub arc_length: f64,
    pub iterations: usize,
    /// Natural-gradient solves that stopped at the iteration cap.
    pub cg_unconverged: usize,
    pub truncated: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryReport {
    pub model: ModelSpec,
    pub dataset_size: usize,
    pub methods: Vec<MethodSummary>,
    pub checks: Vec<CheckResult>,
    pub all_passed: bool,
}

pub fn trace_path(out_dir: &Path, method: Method) -> PathBuf {
    out_dir.join(format!("{}.jsonl", method.name()))
}

/// The configured dataset: loaded from CSV when one is named, generated
/// otherwise.
pub fn load_dataset(config: &ExperimentConfig, model: &ModelSpec) -> Result<Dataset> {
    match &config.dataset.csv {
        Some(path) => {
            let file = File::open(path).with_context(|| format!("dataset.csv: opening {}", path.display()))?;
            Dataset::read_csv(file, model).with_context(|| format!("dataset.csv: reading {}", path.display()))
        }
        None => generate_dataset(&config.dataset, model).context("dataset"),
    }
}

fn path_arc_length(model: &ModelSpec, data: &Dataset, run: &OptimizerRun) -> Result<f64> {
    let mut total = 0.0;
    let mut from = &run.initial_point;
    for to in &run.iterates {
        let step = from.displacement_to(to)?;
        if step.iter().any(|v| *v != 0.0) {
            let curve = LineSegmentCurve::new(from.clone(), step)?;
            total += fisher_arc_length(model, &curve, data, DEFAULT_ARC_NODES)?;
        }
        from = to;
    }
    Ok(total)
}

fn run_method(
    config: &ExperimentConfig,
    index: usize,
    method: &MethodConfig,
    model: &ModelSpec,
    data: &Dataset,
    start: &ParamPoint,
) -> Result<MethodSummary> {
    let objective = NllObjective::new(model, data)?;
    let opt = OptimizerConfig {
        method: method.name,
        step_size: method.step_size,
        iterations: config.run.iterations,
        regularizer: method.regularizer,
        fisher: config.fisher.clone(),
    };
    let run = run_optimizer(&objective, start, &opt)?;
    // written before anything else can fail, so partial runs are kept
    let path = trace_path(&config.run.out_dir, method.name);
    let mut out = BufWriter::new(File::create(&path).with_context(|| format!("creating {}", path.display()))?);
    run.write_jsonl(&mut out)?;
    out.flush()?;
    info!(
        "{}: {} iterations, final loss {:e}",
        method.name,
        run.len(),
        run.final_loss()
    );
    let arc_length = path_arc_length(model, data, &run)
        .with_context(|| format!("methods[{index}]: arc length of the iterate path"))?;
    Ok(MethodSummary {
        method: method.name,
        step_size: method.step_size,
        trace_file: format!("{}.jsonl", method.name.name()),
        initial_loss: run.initial_loss,
        final_loss: run.final_loss(),
        loss_curve: run.losses.clone(),
        arc_length,
        iterations: run.len(),
        cg_unconverged: run.cg_converged.iter().filter(|c| !**c).count(),
        truncated: run.truncated.clone(),
    })
}

/// Runs every method (in parallel), then the identity suites, and writes
/// `<method>.jsonl` traces and `summary.json` into the output directory.
/// With zero iterations only the identity checks run.
pub fn run_experiment(config: &ExperimentConfig) -> Result<SummaryReport> {
    config.validate()?;
    let model = config.model_spec()?;
    ensure_writable(&config.run.out_dir).context("run.out_dir")?;
    let data = load_dataset(config, &model)?;
    data.check_compatible(&model).context("dataset")?;
    let start = match &config.run.start {
        Some(s) => ParamPoint::from_slice(s).context("run.start")?,
        None => ParamPoint::zeros(model.param_dim()),
    };

    let methods: Vec<MethodSummary> = if config.run.iterations == 0 {
        Vec::new()
    } else {
        thread::scope(|scope| {
            let handles: Vec<_> = config
                .methods
                .iter()
                .enumerate()
                .map(|(i, m)| {
                    let (model, data, start) = (&model, &data, &start);
                    scope.spawn(move || {
                        run_method(config, i, m, model, data, start)
                            .with_context(|| format!("methods[{i}] ({})", m.name))
                    })
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("optimizer thread panicked"))
                .collect::<Result<Vec<_>>>()
        })?
    };

    let mut checks = run_suites(&config.checks, config.fisher.relative_epsilon, config.fisher.rank_tol)
        .context("checks")?;
    let theta = theta_star(&config.dataset, &model).context("dataset.theta_star")?;
    checks.extend(dataset_checks(&config.checks, &model, &theta, &data).context("checks")?);
    for m in &methods {
        let completed = CheckResult::new(
            format!("run_completed_{}", m.method.name()),
            if m.truncated.is_some() { 1.0 } else { 0.0 },
            Bound::AtMost { max: 0.0 },
            1,
        );
        checks.push(match &m.truncated {
            Some(why) => completed.with_note(why.clone()),
            None => completed,
        });
    }

    let all_passed = checks.iter().all(|c| c.passed);
    let report = SummaryReport {
        model,
        dataset_size: data.len(),
        methods,
        checks,
        all_passed,
    };
    let path = config.run.out_dir.join(SUMMARY_FILE);
    let mut text = serde_json::to_string_pretty(&report)?;
    text.push('\n');
    fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(report)
}

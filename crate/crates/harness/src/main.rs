use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;
use tangent_core::solver::Method;
use tangent_harness::config::{ensure_writable, ExperimentConfig};
use tangent_harness::data::generate_dataset;
use tangent_harness::experiment::{run_experiment, trace_path, SummaryReport, SUMMARY_FILE};
use tangent_harness::plot::emit_plot_data;

/// Compare gradient descent, Newton and natural gradient on synthetic
/// classification problems, and verify the identities relating them.
///
/// Log verbosity is read from TANGENT_LOG (error, warn, info, debug, trace).
#[derive(Parser)]
#[command(name = "tangent", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the configured synthetic dataset to <out>/dataset.csv.
    GenData(Common),
    /// Run the configured methods, then the identity suites.
    Run(Common),
    /// Run only the identity suites.
    CheckIdentities(Common),
    /// Merge traces into <out>/plot_data.csv.
    PlotData {
        #[command(flatten)]
        common: Common,
        /// Trace files; defaults to <out>/<method>.jsonl for each method.
        traces: Vec<PathBuf>,
    },
}

#[derive(Args)]
struct Common {
    /// TOML experiment configuration; built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the dataset, Fisher-sampling and check seeds.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Restrict to these methods (gd, newton, natural-gradient).
    #[arg(long = "method")]
    methods: Vec<Method>,
}

impl Common {
    fn config(&self) -> Result<ExperimentConfig> {
        let mut config = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        if let Some(seed) = self.seed {
            config.reseed(seed);
        }
        if let Some(out) = &self.out {
            config.run.out_dir = out.clone();
        }
        if !self.methods.is_empty() {
            for m in &self.methods {
                anyhow::ensure!(
                    config.methods.iter().any(|c| c.name == *m),
                    "--method {m}: not configured"
                );
            }
            config.methods.retain(|c| self.methods.contains(&c.name));
        }
        config.validate()?;
        Ok(config)
    }
}

fn report(summary: &SummaryReport, config: &ExperimentConfig) -> bool {
    for m in &summary.methods {
        println!(
            "{:<17} loss {:.6e} -> {:.6e}  arc length {:.4}  ({} iterations, {} capped CG solves{})",
            m.method.name(),
            m.initial_loss,
            m.final_loss,
            m.arc_length,
            m.iterations,
            m.cg_unconverged,
            if m.truncated.is_some() { ", truncated" } else { "" }
        );
    }
    for c in &summary.checks {
        println!("{c}");
    }
    println!("summary written to {}", config.run.out_dir.join(SUMMARY_FILE).display());
    summary.all_passed
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::GenData(common) => {
            let config = common.config()?;
            let model = config.model_spec()?;
            ensure_writable(&config.run.out_dir)?;
            let data = generate_dataset(&config.dataset, &model)?;
            let path = config.run.out_dir.join("dataset.csv");
            let mut out = BufWriter::new(File::create(&path).with_context(|| format!("creating {}", path.display()))?);
            data.write_csv(&mut out)?;
            out.flush()?;
            println!("{} observations written to {}", data.len(), path.display());
            Ok(true)
        }
        Command::Run(common) => {
            let config = common.config()?;
            let summary = run_experiment(&config)?;
            Ok(report(&summary, &config))
        }
        Command::CheckIdentities(common) => {
            let mut config = common.config()?;
            config.run.iterations = 0;
            let summary = run_experiment(&config)?;
            Ok(report(&summary, &config))
        }
        Command::PlotData { common, traces } => {
            let config = common.config()?;
            let traces = if traces.is_empty() {
                config
                    .methods
                    .iter()
                    .map(|m| trace_path(&config.run.out_dir, m.name))
                    .collect()
            } else {
                traces
            };
            ensure_writable(&config.run.out_dir)?;
            let path = config.run.out_dir.join("plot_data.csv");
            let file = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
            let rows = emit_plot_data(&traces, BufWriter::new(file))?;
            info!("merged {} traces", traces.len());
            println!("{rows} rows written to {}", path.display());
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("TANGENT_LOG", "warn")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

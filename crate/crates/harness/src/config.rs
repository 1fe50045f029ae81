//! Experiment configuration, read from TOML.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use serde::{Deserialize, Serialize};
use tangent_core::solver::{FisherConfig, Method};
use tangent_core::{Family, ModelSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    pub dataset: DatasetConfig,
    pub methods: Vec<MethodConfig>,
    pub fisher: FisherConfig,
    pub run: RunConfig,
    pub checks: CheckConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub family: Family,
    pub feature_dim: usize,
    /// Ignored for the logistic family, which always has two classes.
    #[serde(default = "two")]
    pub class_count: usize,
}

fn two() -> usize {
    2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub n: usize,
    pub seed: u64,
    /// Label-generating parameters. Drawn as N(0, scale²) from `seed` when absent.
    pub theta_star: Option<Vec<f64>>,
    pub theta_star_scale: f64,
    /// Load observations from this CSV instead of generating them.
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodConfig {
    pub name: Method,
    pub step_size: f64,
    /// Tikhonov term added to the Newton system.
    #[serde(default)]
    pub regularizer: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub iterations: usize,
    pub out_dir: PathBuf,
    /// Starting point; the origin when absent.
    pub start: Option<Vec<f64>>,
}

/// Sizes and tolerances of the identity suites.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CheckConfig {
    pub seed: u64,
    pub instances: usize,
    pub score_points: usize,
    pub ftc_nodes: usize,
    pub remainder_step: f64,
    pub kl_step: f64,
    pub mc_seeds: usize,
    pub mc_observations: usize,
    pub mc_draws: Vec<usize>,
    pub metric_max_dim: usize,
    pub cg_max_dim: usize,
    pub image_first_leak: f64,
    pub ng_problems: usize,
    pub ng_iterations: usize,
    pub arc_step: f64,
    pub tolerances: Tolerances,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    pub ftc: f64,
    pub remainder_ratio: [f64; 2],
    pub score: f64,
    pub duality: f64,
    pub kl_ratio: [f64; 2],
    pub mc_slope: [f64; 2],
    pub metric_min_eigenvalue: f64,
    pub metric_spectral: f64,
    pub cg_relative: f64,
    pub image_first_fraction: f64,
    pub ng_newton: f64,
    pub arc_kl: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig {
                family: Family::Softmax,
                feature_dim: 3,
                class_count: 3,
            },
            dataset: DatasetConfig::default(),
            methods: vec![
                MethodConfig {
                    name: Method::Gd,
                    step_size: 0.5,
                    regularizer: 0.0,
                },
                MethodConfig {
                    name: Method::Newton,
                    step_size: 1.0,
                    regularizer: 1e-6,
                },
                MethodConfig {
                    name: Method::NaturalGradient,
                    step_size: 1.0,
                    regularizer: 0.0,
                },
            ],
            fisher: FisherConfig::default(),
            run: RunConfig::default(),
            checks: CheckConfig::default(),
        }
    }
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            n: 200,
            seed: 7,
            theta_star: None,
            theta_star_scale: 1.0,
            csv: None,
        }
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            iterations: 50,
            out_dir: PathBuf::from("out"),
            start: None,
        }
    }
}

impl Default for CheckConfig {
    fn default() -> Self {
        Self {
            seed: 2024,
            instances: 100,
            score_points: 1000,
            ftc_nodes: 32,
            remainder_step: 0.2,
            kl_step: 0.5,
            mc_seeds: 20,
            mc_observations: 10,
            mc_draws: vec![100, 1000, 10000],
            metric_max_dim: 20,
            cg_max_dim: 50,
            image_first_leak: 1e-6,
            ng_problems: 20,
            ng_iterations: 20,
            arc_step: 0.01,
            tolerances: Tolerances::default(),
        }
    }
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            ftc: 1e-8,
            remainder_ratio: [6.0, 10.0],
            score: 1e-12,
            duality: 1e-10,
            kl_ratio: [6.0, 10.0],
            mc_slope: [-0.65, -0.35],
            metric_min_eigenvalue: 1e-12,
            metric_spectral: 1e-10,
            cg_relative: 1e-8,
            image_first_fraction: 1e-6,
            ng_newton: 1e-8,
            arc_kl: 0.05,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut config = Self::from_toml(&text).with_context(|| format!("in {}", path.display()))?;
        // relative dataset paths are resolved against the config file
        if let (Some(csv), Some(dir)) = (&config.dataset.csv, path.parent()) {
            if csv.is_relative() {
                config.dataset.csv = Some(dir.join(csv));
            }
        }
        Ok(config)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string_pretty(self)?)
    }

    /// One seed for data, Fisher sampling and the identity suites.
    pub fn reseed(&mut self, seed: u64) {
        self.dataset.seed = seed;
        self.fisher.seed = seed;
        self.checks.seed = seed;
    }

    pub fn model_spec(&self) -> Result<ModelSpec> {
        let m = &self.model;
        let class_count = match m.family {
            Family::BinaryLogistic => 2,
            Family::Softmax => m.class_count,
        };
        ModelSpec::new(m.family, m.feature_dim, class_count).context("model")
    }

    pub fn validate(&self) -> Result<()> {
        let spec = self.model_spec()?;
        if self.model.family == Family::BinaryLogistic && self.model.class_count != 2 {
            bail!("model.class_count: the logistic family has exactly 2 classes");
        }
        ensure!(self.dataset.n >= 1, "dataset.n must be at least 1");
        if let Some(t) = &self.dataset.theta_star {
            ensure!(
                t.len() == spec.param_dim(),
                "dataset.theta_star has length {}, the model has {} parameters",
                t.len(),
                spec.param_dim()
            );
            ensure!(t.iter().all(|v| v.is_finite()), "dataset.theta_star must be finite");
        }
        ensure!(
            self.dataset.theta_star_scale.is_finite() && self.dataset.theta_star_scale >= 0.0,
            "dataset.theta_star_scale must be finite and non-negative"
        );
        if let Some(s) = &self.run.start {
            ensure!(
                s.len() == spec.param_dim(),
                "run.start has length {}, the model has {} parameters",
                s.len(),
                spec.param_dim()
            );
        }
        for (i, m) in self.methods.iter().enumerate() {
            ensure!(
                m.step_size > 0.0 && m.step_size.is_finite(),
                "methods[{i}].step_size must be positive"
            );
            ensure!(
                m.regularizer >= 0.0 && m.regularizer.is_finite(),
                "methods[{i}].regularizer must be non-negative"
            );
            if self.methods[..i].iter().any(|o| o.name == m.name) {
                bail!("methods[{i}]: {} is listed twice", m.name);
            }
        }
        let f = &self.fisher;
        ensure!(f.draws_per_obs >= 1, "fisher.draws_per_obs must be at least 1");
        ensure!(f.rank_tol >= 0.0, "fisher.rank_tol must be non-negative");
        ensure!(f.relative_epsilon > 0.0, "fisher.relative_epsilon must be positive");
        if let Some(e) = f.epsilon {
            ensure!(e > 0.0, "fisher.epsilon must be positive");
        }
        let c = &self.checks;
        ensure!(c.instances >= 1 && c.score_points >= 1, "checks: instance counts must be positive");
        ensure!(c.mc_draws.len() >= 2, "checks.mc_draws needs at least two sizes");
        ensure!(c.mc_draws.iter().all(|n| *n > 0 && n % c.mc_observations.max(1) == 0),
            "checks.mc_draws must be positive multiples of checks.mc_observations");
        ensure!(c.mc_observations >= 1 && c.mc_seeds >= 1, "checks: Monte-Carlo sizes must be positive");
        ensure!(c.metric_max_dim >= 1 && c.cg_max_dim >= 1, "checks: dimensions must be positive");
        ensure!(c.ng_problems >= 1 && c.ng_iterations >= 1, "checks: Newton comparison sizes must be positive");
        Ok(())
    }
}

/// Creates `dir` if needed and confirms that files can be written to it.
pub fn ensure_writable(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let probe = dir.join(".tangent-write-probe");
    fs::write(&probe, b"").with_context(|| format!("{} is not writable", dir.display()))?;
    fs::remove_file(&probe).ok();
    Ok(())
}

//! Synthetic datasets with standard-normal features and labels drawn from the
//! model itself.

use anyhow::{ensure, Result};
use nalgebra::DVector;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use tangent_core::{Dataset, ModelSpec, Observation, ParamPoint};

use crate::config::DatasetConfig;

pub fn normal_vector<R: Rng + ?Sized>(rng: &mut R, len: usize) -> DVector<f64> {
    DVector::from_fn(len, |_, _| rng.sample(StandardNormal))
}

/// The label-generating parameters: explicit, or N(0, scale²) drawn first from
/// the dataset seed.
pub fn theta_star(spec: &DatasetConfig, model: &ModelSpec) -> Result<ParamPoint> {
    match &spec.theta_star {
        Some(t) => Ok(ParamPoint::from_slice(t)?),
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            Ok(ParamPoint::new(normal_vector(&mut rng, model.param_dim()) * spec.theta_star_scale)?)
        }
    }
}

/// n observations x ~ N(0, I) and labels h ~ P_θ*(· | x), reproducible from the
/// seed alone.
pub fn generate_dataset(spec: &DatasetConfig, model: &ModelSpec) -> Result<Dataset> {
    ensure!(spec.n >= 1, "dataset.n must be at least 1");
    let theta = theta_star(spec, model)?;
    // a separate stream so an explicit θ* does not shift the features
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(1);
    sample_dataset(model, &theta, spec.n, &mut rng)
}

pub fn sample_dataset<R: Rng + ?Sized>(
    model: &ModelSpec,
    theta: &ParamPoint,
    n: usize,
    rng: &mut R,
) -> Result<Dataset> {
    let mut observations = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let o = Observation::new(normal_vector(rng, model.feature_dim()))?;
        labels.push(model.sample_h(theta, &o, rng)?);
        observations.push(o);
    }
    Ok(Dataset::new(observations, labels)?)
}

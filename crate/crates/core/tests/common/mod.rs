#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use tangent_core::{Dataset, Hypothesis, ModelSpec, Observation, ParamPoint, TangentVector};

pub fn normal_vec<R: Rng>(rng: &mut R, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample(StandardNormal))
}

/// Random direction scaled to the given Euclidean norm.
pub fn direction<R: Rng>(rng: &mut R, n: usize, norm: f64) -> TangentVector {
    let v = normal_vec(rng, n);
    TangentVector::new(&v * (norm / v.norm())).unwrap()
}

pub fn random_model<R: Rng>(rng: &mut R) -> ModelSpec {
    let d = rng.random_range(1..=4);
    if rng.random_bool(0.5) {
        ModelSpec::binary_logistic(d).unwrap()
    } else {
        ModelSpec::softmax(d, rng.random_range(2..=4)).unwrap()
    }
}

/// Standard-normal features with labels drawn from the model at `theta`.
pub fn sampled_dataset<R: Rng>(rng: &mut R, model: &ModelSpec, theta: &ParamPoint, n: usize) -> Dataset {
    let mut obs = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let o = Observation::new(normal_vec(rng, model.feature_dim())).unwrap();
        labels.push(model.sample_h(theta, &o, rng).unwrap());
        obs.push(o);
    }
    Dataset::new(obs, labels).unwrap()
}

pub struct Instance {
    pub model: ModelSpec,
    pub theta: ParamPoint,
    pub data: Dataset,
}

pub fn random_instance<R: Rng>(rng: &mut R, model: ModelSpec, n: usize) -> Instance {
    let theta = ParamPoint::new(normal_vec(rng, model.param_dim()) * 0.5).unwrap();
    let data = sampled_dataset(rng, &model, &theta, n);
    Instance { model, theta, data }
}

/// Random orthogonal matrix from the QR factor of a Gaussian matrix.
pub fn orthogonal<R: Rng>(rng: &mut R, n: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal)).qr().q()
}

/// Q diag(λ) Qᵀ, symmetrized.
pub fn with_spectrum(q: &DMatrix<f64>, eigenvalues: &[f64]) -> DMatrix<f64> {
    let a = q * DMatrix::from_diagonal(&DVector::from_column_slice(eigenvalues)) * q.transpose();
    (&a + a.transpose()) * 0.5
}

pub fn label(h: usize) -> Hypothesis {
    Hypothesis(h)
}

pub fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

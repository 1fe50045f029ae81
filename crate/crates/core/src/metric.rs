//! Damped positive-definite metric built from a (possibly rank-deficient)
//! empirical Fisher matrix.
//!
//! The input Î = VΛVᵀ is diagonalized, the eigenvector columns are ordered so
//! that the m eigenvalues above the rank threshold come first, and the
//! remaining kernel directions are assigned ε:
//!
//! ```text
//! Ĩ = V · diag(λ₁, …, λₘ, ε, …, ε) · Vᵀ
//! ```
//!
//! Ĩ agrees with Î on the image of Î, acts as ε·I on its kernel, and is
//! positive definite for any ε > 0. All operations work on the factors; the
//! dense matrix is only formed on request.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{check_dim, Error, Result};
use crate::prob_model::TangentVector;

/// Relative rank threshold: λ counts as nonzero when λ > tol · λ_max.
pub const DEFAULT_RANK_TOL: f64 = 1e-10;

/// Default damping relative to λ_max.
pub const DEFAULT_RELATIVE_EPSILON: f64 = 1e-8;

/// Damping used when the input is the zero matrix and ε is relative.
pub const ZERO_MATRIX_EPSILON: f64 = 1e-8;

const SYMMETRY_INPUT_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct SpectralDecomposition {
    eigvecs: DMatrix<f64>,
    eigvals: DVector<f64>,
    rank: usize,
}

impl SpectralDecomposition {
    /// Orthogonal V, columns in descending eigenvalue order.
    pub fn eigvecs(&self) -> &DMatrix<f64> {
        &self.eigvecs
    }

    pub fn eigvals(&self) -> &DVector<f64> {
        &self.eigvals
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn dim(&self) -> usize {
        self.eigvals.len()
    }

    pub fn max_eigenvalue(&self) -> f64 {
        self.eigvals.iter().copied().fold(0.0, f64::max)
    }

    /// V · diag(Λ) · Vᵀ.
    pub fn reconstruct(&self) -> DMatrix<f64> {
        let scaled = &self.eigvecs * DMatrix::from_diagonal(&self.eigvals);
        scaled * self.eigvecs.transpose()
    }
}

/// Eigendecomposition of a symmetric PSD matrix with eigenpairs sorted by
/// descending eigenvalue and each eigenvector's first nonzero component made
/// positive. The rank m counts eigenvalues strictly above `rank_tol · λ_max`.
pub fn spectral_decompose(a: &DMatrix<f64>, rank_tol: f64) -> Result<SpectralDecomposition> {
    if !a.is_square() {
        return Err(Error::InvalidArgument("matrix must be square".into()));
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("matrix"));
    }
    if !(rank_tol >= 0.0 && rank_tol.is_finite()) {
        return Err(Error::InvalidArgument(format!("rank_tol must be >= 0, got {rank_tol}")));
    }
    let scale = a.amax().max(1.0);
    if (a - a.transpose()).amax() > SYMMETRY_INPUT_TOL * scale {
        return Err(Error::InvalidArgument("matrix is not symmetric".into()));
    }
    let n = a.nrows();
    let sym = (a + a.transpose()) * 0.5;
    let eig = SymmetricEigen::try_new(sym, f64::EPSILON, 1000 * n.max(1))
        .ok_or(Error::EigenNoConvergence)?;

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]).then(i.cmp(&j)));

    let mut eigvecs = DMatrix::zeros(n, n);
    let mut eigvals = DVector::zeros(n);
    for (dst, &src) in order.iter().enumerate() {
        let mut col = eig.eigenvectors.column(src).into_owned();
        let pivot = col.iter().copied().find(|v| v.abs() > 1e-12).unwrap_or(0.0);
        if pivot < 0.0 {
            col.neg_mut();
        }
        eigvecs.set_column(dst, &col);
        eigvals[dst] = eig.eigenvalues[src];
    }

    let lambda_max = eigvals.iter().copied().fold(0.0, f64::max);
    let threshold = rank_tol * lambda_max;
    let rank = if lambda_max > 0.0 {
        eigvals.iter().filter(|&&l| l > threshold).count()
    } else {
        0
    };
    Ok(SpectralDecomposition {
        eigvecs,
        eigvals,
        rank,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DampedMetric {
    decomposition: SpectralDecomposition,
    epsilon: f64,
}

/// Keeps the first m eigenpairs and assigns ε to the kernel partition.
pub fn damp(decomposition: SpectralDecomposition, epsilon: f64) -> Result<DampedMetric> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::InvalidArgument(format!("epsilon must be positive, got {epsilon}")));
    }
    Ok(DampedMetric {
        decomposition,
        epsilon,
    })
}

/// [`damp`] with ε = `relative · λ_max`, falling back to
/// [`ZERO_MATRIX_EPSILON`] when the decomposed matrix is zero.
pub fn damp_relative(decomposition: SpectralDecomposition, relative: f64) -> Result<DampedMetric> {
    let lambda_max = decomposition.max_eigenvalue();
    let epsilon = if lambda_max > 0.0 {
        relative * lambda_max
    } else {
        ZERO_MATRIX_EPSILON
    };
    damp(decomposition, epsilon)
}

impl DampedMetric {
    pub fn decomposition(&self) -> &SpectralDecomposition {
        &self.decomposition
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn dim(&self) -> usize {
        self.decomposition.dim()
    }

    pub fn rank(&self) -> usize {
        self.decomposition.rank
    }

    /// Eigenvalues of Ĩ in column order of V: (λ₁, …, λₘ, ε, …, ε).
    pub fn eigenvalues(&self) -> DVector<f64> {
        let m = self.rank();
        DVector::from_fn(self.dim(), |i, _| {
            if i < m {
                self.decomposition.eigvals[i]
            } else {
                self.epsilon
            }
        })
    }

    /// min(ε, λₘ); the smallest eigenvalue of Ĩ.
    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues().min()
    }

    /// Dense V · diag(λ₁..λₘ, ε…ε) · Vᵀ.
    pub fn to_dense(&self) -> DMatrix<f64> {
        let v = &self.decomposition.eigvecs;
        (v * DMatrix::from_diagonal(&self.eigenvalues())) * v.transpose()
    }

    /// Ĩ·v through the factors.
    pub fn matvec(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim("tangent vector", self.dim(), v.len())?;
        Ok(self.apply_spectral(v, |lambda| lambda))
    }

    /// Ĩ⁻¹·v through the factors.
    pub fn solve(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim("tangent vector", self.dim(), v.len())?;
        Ok(self.apply_spectral(v, |lambda| 1.0 / lambda))
    }

    fn apply_spectral(&self, v: &DVector<f64>, f: impl Fn(f64) -> f64) -> DVector<f64> {
        let basis = &self.decomposition.eigvecs;
        let mut coords = basis.tr_mul(v);
        for (c, lambda) in coords.iter_mut().zip(self.eigenvalues().iter()) {
            *c *= f(*lambda);
        }
        basis * coords
    }

    fn project(&self, v: &DVector<f64>, columns: std::ops::Range<usize>) -> Result<DVector<f64>> {
        check_dim("tangent vector", self.dim(), v.len())?;
        let block = self
            .decomposition
            .eigvecs
            .columns(columns.start, columns.end - columns.start);
        Ok(block * block.tr_mul(v))
    }

    /// Orthogonal projection onto span of the first m eigenvectors.
    pub fn project_image(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        self.project(v, 0..self.rank())
    }

    /// Orthogonal projection onto span of the last D − m eigenvectors.
    pub fn project_kernel(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        self.project(v, self.rank()..self.dim())
    }
}

pub fn metric_matvec(metric: &DampedMetric, v: &TangentVector) -> Result<TangentVector> {
    TangentVector::new(metric.matvec(v.as_vector())?)
}

pub fn project_image(metric: &DampedMetric, v: &TangentVector) -> Result<TangentVector> {
    TangentVector::new(metric.project_image(v.as_vector())?)
}

pub fn project_kernel(metric: &DampedMetric, v: &TangentVector) -> Result<TangentVector> {
    TangentVector::new(metric.project_kernel(v.as_vector())?)
}

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{ensure, Result};

/// Ridge added to covariances estimated from too few samples or with
/// vanishing eigenvalues.
pub const COV_RIDGE: f64 = 1e-6;
const MIN_EIGENVALUE: f64 = 1e-10;

/// Mean and covariance of a set of embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianStats {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub n: usize,
    /// Whether [`COV_RIDGE`] was added to the diagonal.
    pub regularized: bool,
}

impl GaussianStats {
    /// Stats from an explicit mean and covariance; the covariance must be
    /// symmetric and positive semi-definite (to 1e-8).
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>, n: usize) -> Result<Self> {
        let d = mean.len();
        ensure!(cov.nrows() == d && cov.ncols() == d, Shape, "covariance is not {d}x{d}");
        ensure!(
            mean.iter().chain(cov.iter()).all(|x| x.is_finite()),
            Precondition,
            "non-finite statistics"
        );
        ensure!((&cov - cov.transpose()).amax() <= 1e-8, Precondition, "covariance is not symmetric");
        let min = SymmetricEigen::new(cov.clone()).eigenvalues.min();
        ensure!(min >= -1e-8, Precondition, "covariance has eigenvalue {min}");
        Ok(Self {
            mean,
            cov,
            n,
            regularized: false,
        })
    }

    /// Maximum-likelihood stats of `rows` (each of length `dim`). The
    /// covariance is normalized by `n`, so duplicating the sample set leaves
    /// the stats unchanged.
    pub fn from_samples(rows: &[Vec<f64>]) -> Result<Self> {
        ensure!(!rows.is_empty(), Precondition, "no samples");
        let d = rows[0].len();
        ensure!(rows.iter().all(|r| r.len() == d), Shape, "ragged samples");
        ensure!(rows.iter().flatten().all(|x| x.is_finite()), Precondition, "non-finite sample");
        let n = rows.len();
        let x = DMatrix::from_fn(n, d, |i, j| rows[i][j]);
        let mean = x.row_mean().transpose();
        let centred = DMatrix::from_fn(n, d, |i, j| x[(i, j)] - mean[j]);
        let mut cov = centred.transpose() * &centred / n as f64;
        cov = (&cov + cov.transpose()) * 0.5;
        let min = SymmetricEigen::new(cov.clone()).eigenvalues.min();
        let regularized = n < d + 1 || min < MIN_EIGENVALUE;
        if regularized {
            cov += DMatrix::identity(d, d) * COV_RIDGE;
        }
        Ok(Self {
            mean,
            cov,
            n,
            regularized,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Square root of a symmetric positive semi-definite matrix via its
/// eigendecomposition; negative eigenvalues are clamped to zero.
pub fn sqrt_psd(m: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let e = SymmetricEigen::new(sym);
    let roots = e.eigenvalues.map(|l| l.max(0.0).sqrt());
    &e.eigenvectors * DMatrix::from_diagonal(&roots) * e.eigenvectors.transpose()
}

/// Squared Fréchet distance `|mu_a - mu_b|^2 + Tr(S_a + S_b - 2 (S_a S_b)^(1/2))`.
/// The trace of the product root is taken as the sum of root eigenvalues of
/// the symmetric `S_a^(1/2) S_b S_a^(1/2)`.
pub fn frechet_distance(a: &GaussianStats, b: &GaussianStats) -> Result<f64> {
    ensure!(a.dim() == b.dim(), Shape, "dimensions differ: {} vs {}", a.dim(), b.dim());
    ensure!(
        a.mean.iter().chain(a.cov.iter()).chain(b.mean.iter()).chain(b.cov.iter()).all(|x| x.is_finite()),
        Precondition,
        "non-finite statistics"
    );
    let diff = (&a.mean - &b.mean).norm_squared();
    let sa = sqrt_psd(&a.cov);
    let inner = &sa * &b.cov * &sa;
    let inner = (&inner + inner.transpose()) * 0.5;
    let tr_root: f64 = SymmetricEigen::new(inner).eigenvalues.iter().map(|l| l.max(0.0).sqrt()).sum();
    Ok((diff + a.cov.trace() + b.cov.trace() - 2.0 * tr_root).max(0.0))
}

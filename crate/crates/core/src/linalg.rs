//! Cholesky helpers with an escalating-jitter fallback.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

/// First jitter tried after a bare factorization fails.
pub const JITTER_INITIAL: f64 = 1e-8;
/// Largest jitter tried before giving up.
pub const JITTER_MAX: f64 = 1e-4;

/// Cholesky factor plus the diagonal jitter that was needed to obtain it.
pub struct JitteredCholesky {
    pub chol: Cholesky<f64, Dyn>,
    pub jitter: f64,
}

/// Factorizes a symmetric matrix, escalating diagonal jitter on failure.
///
/// Tries the matrix as-is, then with `1e-8` added to the diagonal, escalating
/// by a factor of 10 up to `1e-4` before reporting failure.
pub fn cholesky_with_jitter(mat: &DMatrix<f64>) -> Result<JitteredCholesky> {
    debug_assert_eq!(mat.nrows(), mat.ncols());
    if let Some(chol) = Cholesky::new(mat.clone()) {
        return Ok(JitteredCholesky { chol, jitter: 0.0 });
    }
    let mut jitter = JITTER_INITIAL;
    while jitter <= JITTER_MAX * (1.0 + 1e-12) {
        let mut jittered = mat.clone();
        for i in 0..jittered.nrows() {
            jittered[(i, i)] += jitter;
        }
        if let Some(chol) = Cholesky::new(jittered) {
            return Ok(JitteredCholesky { chol, jitter });
        }
        jitter *= 10.0;
    }
    Err(Error::CholeskyFailure {
        size: mat.nrows(),
        max_jitter: JITTER_MAX,
    })
}

impl JitteredCholesky {
    /// Log-determinant of the factorized matrix.
    pub fn log_det(&self) -> f64 {
        2.0 * self.chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>()
    }

    pub fn solve_vec(&self, b: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(b)
    }

    pub fn solve_mat(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        self.chol.solve(b)
    }

    /// Explicit inverse; used by trace-identity gradients.
    pub fn inverse(&self) -> DMatrix<f64> {
        self.chol.inverse()
    }
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_symmetric_eigenvalue(mat: &DMatrix<f64>) -> f64 {
    let sym = nalgebra::SymmetricEigen::new(mat.clone());
    sym.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min)
}

/// Sums a slice with pairwise (tree) recursion so the result does not depend
/// on chunked/parallel traversal order elsewhere in the pipeline.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    if values.len() <= 8 {
        return values.iter().sum();
    }
    let mid = values.len() / 2;
    pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
}

//! Symmetric factorization helpers.
//!
//! Every positive-definite solve in the library goes through
//! [`CholeskyGuard`], which escalates a trace-scaled diagonal jitter
//! (1e-12 -> 1e-10 -> 1e-8 of the mean diagonal) before giving up, and
//! reports a conditioning hint on failure.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

const JITTER_LADDER: [f64; 4] = [0.0, 1e-12, 1e-10, 1e-8];

/// Cholesky factorization with jitter escalation.
#[derive(Debug)]
pub struct CholeskyGuard {
    factor: Cholesky<f64, Dyn>,
    /// Jitter actually added to the diagonal (absolute value).
    pub jitter: f64,
}

impl CholeskyGuard {
    /// Factors a symmetric positive-definite matrix, escalating jitter when
    /// the bare factorization fails.
    pub fn new(matrix: &DMatrix<f64>, context: &str) -> Result<Self> {
        let n = matrix.nrows();
        if n != matrix.ncols() {
            return Err(Error::dimension(format!(
                "{context}: matrix is {}x{}, expected square",
                n,
                matrix.ncols()
            )));
        }
        let mean_diag = if n == 0 {
            0.0
        } else {
            matrix.trace() / n as f64
        };
        for &level in &JITTER_LADDER {
            let jitter = level * mean_diag;
            let candidate = if jitter > 0.0 {
                let mut m = matrix.clone();
                for i in 0..n {
                    m[(i, i)] += jitter;
                }
                Cholesky::new(m)
            } else {
                Cholesky::new(matrix.clone())
            };
            if let Some(factor) = candidate {
                return Ok(CholeskyGuard { factor, jitter });
            }
        }
        Err(Error::numeric(format!(
            "{context}: Cholesky failed after jitter escalation to 1e-8 of the mean diagonal ({mean_diag:.3e}); the system is numerically singular"
        )))
    }

    pub fn solve_vec(&self, rhs: &DVector<f64>) -> DVector<f64> {
        self.factor.solve(rhs)
    }

    pub fn solve_mat(&self, rhs: &DMatrix<f64>) -> DMatrix<f64> {
        self.factor.solve(rhs)
    }

    /// `log det` of the factored matrix via the Cholesky diagonal.
    pub fn log_determinant(&self) -> f64 {
        2.0 * self
            .factor
            .l_dirty()
            .diagonal()
            .iter()
            .map(|v| v.ln())
            .sum::<f64>()
    }
}

/// Forces exact symmetry by averaging with the transpose.
pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
}

//! Small dense helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Largest relative jitter tried before giving up on a factorization.
pub const MAX_RELATIVE_JITTER: f64 = 1e-3;

/// Lower Cholesky factor of `a + jitter·I`, escalating the jitter by 10x
/// from `rel_jitter · mean(diag)` up to [`MAX_RELATIVE_JITTER`].
///
/// Returns the factor and the absolute jitter that was finally applied.
pub fn cholesky_jittered(a: &DMatrix<f64>, rel_jitter: f64) -> Result<(DMatrix<f64>, f64)> {
    let n = a.nrows();
    if n == 0 {
        return Ok((DMatrix::zeros(0, 0), 0.0));
    }
    let mean_diag = (a.diagonal().sum() / n as f64).abs().max(f64::MIN_POSITIVE);
    let mut rel = rel_jitter;
    loop {
        let jitter = rel * mean_diag;
        let mut m = a.clone();
        for i in 0..n {
            m[(i, i)] += jitter;
        }
        if let Some(ch) = m.cholesky() {
            let l = ch.l();
            if l.iter().all(|v| v.is_finite()) {
                return Ok((l, jitter));
            }
        }
        if rel >= MAX_RELATIVE_JITTER {
            return Err(Error::Numerical {
                message: format!("Cholesky factorization of a {n}x{n} matrix failed"),
                condition: condition_estimate(a),
            });
        }
        rel = if rel <= 0.0 { 1e-9 } else { (rel * 10.0).min(MAX_RELATIVE_JITTER) };
    }
}

/// Ratio of extreme eigenvalue magnitudes of a symmetric matrix.
pub fn condition_estimate(a: &DMatrix<f64>) -> f64 {
    if a.iter().any(|v| !v.is_finite()) {
        return f64::INFINITY;
    }
    let eig = a.clone().symmetric_eigenvalues();
    let max = eig.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let min = eig.iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Solves `L x = b` for lower-triangular `L`.
pub fn solve_lower(l: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    l.solve_lower_triangular(b)
        .expect("triangular factor with non-zero diagonal")
}

pub fn solve_lower_vec(l: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    l.solve_lower_triangular(b)
        .expect("triangular factor with non-zero diagonal")
}

/// `2 Σ log L_ii`, the log-determinant of `L Lᵀ`.
pub fn logdet_from_chol(l: &DMatrix<f64>) -> f64 {
    2.0 * l.diagonal().iter().map(|d| d.ln()).sum::<f64>()
}

//! Small dense linear algebra used by the solvers: Gaussian elimination for
//! Newton systems and Cholesky factorization for covariance sampling.

use crate::error::{Error, Result};

/// Solves `a * x = b` in place for a small dense system stored row-major.
/// Partial pivoting; `a` and `b` are consumed.
pub(crate) fn solve(mut a: Vec<f64>, mut b: Vec<f64>) -> Result<Vec<f64>> {
    let k = b.len();
    debug_assert_eq!(a.len(), k * k);
    for col in 0..k {
        let mut pivot = col;
        for row in col + 1..k {
            if a[row * k + col].abs() > a[pivot * k + col].abs() {
                pivot = row;
            }
        }
        if a[pivot * k + col].abs() < 1e-300 {
            return Err(Error::InvalidData(
                "singular matrix in linear solve".to_string(),
            ));
        }
        if pivot != col {
            for j in 0..k {
                a.swap(col * k + j, pivot * k + j);
            }
            b.swap(col, pivot);
        }
        let diag = a[col * k + col];
        for row in col + 1..k {
            let factor = a[row * k + col] / diag;
            if factor == 0.0 {
                continue;
            }
            for j in col..k {
                a[row * k + j] -= factor * a[col * k + j];
            }
            b[row] -= factor * b[col];
        }
    }
    for col in (0..k).rev() {
        let mut sum = b[col];
        for j in col + 1..k {
            sum -= a[col * k + j] * b[j];
        }
        b[col] = sum / a[col * k + col];
    }
    Ok(b)
}

/// Lower-triangular Cholesky factor of a symmetric positive definite matrix
/// (row-major, k x k). Errors if the matrix is not positive definite.
pub(crate) fn cholesky(a: &[f64], k: usize) -> Result<Vec<f64>> {
    debug_assert_eq!(a.len(), k * k);
    let mut l = vec![0.0; k * k];
    for i in 0..k {
        for j in 0..=i {
            let mut sum = a[i * k + j];
            for m in 0..j {
                sum -= l[i * k + m] * l[j * k + m];
            }
            if i == j {
                if sum <= 0.0 {
                    return Err(Error::NotPositiveDefinite);
                }
                l[i * k + j] = sum.sqrt();
            } else {
                l[i * k + j] = sum / l[j * k + j];
            }
        }
    }
    Ok(l)
}

//! Small symmetric positive definite helpers (Cholesky based) for the
//! covariance terms. Latent dimensions are tiny (<= 64), so O(d^3) is fine.

use crate::error::{Error, Result};
use crate::numerics::Mat;

/// Lower-triangular Cholesky factor of a symmetric positive definite matrix.
pub fn cholesky(a: &Mat) -> Result<Mat> {
    let n = a.rows();
    if a.cols() != n {
        return Err(Error::Shape(format!("cholesky on {}x{}", a.rows(), a.cols())));
    }
    let mut l = Mat::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let mut s = a.get(i, j);
            for k in 0..j {
                s -= l.get(i, k) * l.get(j, k);
            }
            if i == j {
                if s <= 0.0 || !s.is_finite() {
                    return Err(Error::Numeric(format!(
                        "matrix not positive definite at pivot {} (value {s})",
                        i
                    )));
                }
                l.set(i, j, s.sqrt());
            } else {
                l.set(i, j, s / l.get(j, j));
            }
        }
    }
    Ok(l)
}

/// log |A| from the Cholesky factor.
pub fn logdet_from_chol(l: &Mat) -> f64 {
    (0..l.rows()).map(|i| l.get(i, i).ln()).sum::<f64>() * 2.0
}

/// Inverse of a symmetric positive definite matrix via its Cholesky factor.
pub fn spd_inverse(a: &Mat) -> Result<Mat> {
    let l = cholesky(a)?;
    let n = a.rows();
    let mut inv = Mat::zeros(n, n);
    // Solve A x = e_j column by column: forward then back substitution.
    let mut y = vec![0.0; n];
    for j in 0..n {
        for i in 0..n {
            let mut s = if i == j { 1.0 } else { 0.0 };
            for k in 0..i {
                s -= l.get(i, k) * y[k];
            }
            y[i] = s / l.get(i, i);
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in i + 1..n {
                s -= l.get(k, i) * inv.get(k, j);
            }
            inv.set(i, j, s / l.get(i, i));
        }
    }
    Ok(inv)
}

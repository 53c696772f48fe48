//! Small dense symmetric-matrix helpers.
//!
//! The decision dimensions in this crate are tiny (d is single digits in the
//! benchmark scenarios), so plain O(d^3) routines are all we need.

use ndarray::{Array1, Array2};

use crate::error::Error;
use crate::Result;

/// Cholesky factor `L` with `A = L L^T`. Fails if `A` is not symmetric
/// positive definite (up to a small symmetry tolerance).
pub fn cholesky(a: &Array2<f64>) -> Result<Array2<f64>> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::DimensionMismatch { expected: n, got: a.ncols() });
    }
    for i in 0..n {
        for j in 0..i {
            if (a[[i, j]] - a[[j, i]]).abs() > 1e-8 * (1.0 + a[[i, j]].abs()) {
                return Err(Error::Contract("matrix is not symmetric".into()));
            }
        }
    }
    let mut l = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[[i, j]];
            for k in 0..j {
                s -= l[[i, k]] * l[[j, k]];
            }
            if i == j {
                if s <= 0.0 {
                    return Err(Error::Contract(
                        "matrix is not positive definite".into(),
                    ));
                }
                l[[i, i]] = s.sqrt();
            } else {
                l[[i, j]] = s / l[[j, j]];
            }
        }
    }
    Ok(l)
}

/// Solves `A x = b` through the Cholesky factor of `A`.
pub fn spd_solve(a: &Array2<f64>, b: &Array1<f64>) -> Result<Array1<f64>> {
    let l = cholesky(a)?;
    let n = b.len();
    let mut y = Array1::<f64>::zeros(n);
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[[i, k]] * y[k];
        }
        y[i] = s / l[[i, i]];
    }
    let mut x = Array1::<f64>::zeros(n);
    for i in (0..n).rev() {
        let mut s = y[i];
        for k in (i + 1)..n {
            s -= l[[k, i]] * x[k];
        }
        x[i] = s / l[[i, i]];
    }
    Ok(x)
}

/// Dense inverse of a symmetric positive-definite matrix.
pub fn spd_inverse(a: &Array2<f64>) -> Result<Array2<f64>> {
    let n = a.nrows();
    let mut inv = Array2::<f64>::zeros((n, n));
    for j in 0..n {
        let mut e = Array1::<f64>::zeros(n);
        e[j] = 1.0;
        let col = spd_solve(a, &e)?;
        for i in 0..n {
            inv[[i, j]] = col[i];
        }
    }
    Ok(inv)
}

/// Largest eigenvalue of a symmetric PSD matrix by power iteration.
pub fn lambda_max(a: &Array2<f64>, iters: usize) -> f64 {
    let n = a.nrows();
    let mut v = Array1::<f64>::from_elem(n, 1.0 / (n as f64).sqrt());
    let mut lam = 0.0;
    for _ in 0..iters {
        let w = a.dot(&v);
        let norm = w.dot(&w).sqrt();
        if norm < 1e-300 {
            return 0.0;
        }
        v = w / norm;
        lam = v.dot(&a.dot(&v));
    }
    lam
}

/// All eigenvalues of a symmetric matrix by cyclic Jacobi rotations,
/// ascending. Used by verification code that audits PSD accumulations.
pub fn symmetric_eigenvalues(a: &Array2<f64>) -> Vec<f64> {
    let n = a.nrows();
    let mut m = a.clone();
    for _sweep in 0..100 {
        let mut off = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                off += m[[i, j]] * m[[i, j]];
            }
        }
        if off < 1e-24 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                if m[[p, q]].abs() < 1e-300 {
                    continue;
                }
                let theta = (m[[q, q]] - m[[p, p]]) / (2.0 * m[[p, q]]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[[k, p]];
                    let mkq = m[[k, q]];
                    m[[k, p]] = c * mkp - s * mkq;
                    m[[k, q]] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[[p, k]];
                    let mqk = m[[q, k]];
                    m[[p, k]] = c * mpk - s * mqk;
                    m[[q, k]] = s * mpk + c * mqk;
                }
            }
        }
    }
    let mut eig: Vec<f64> = (0..n).map(|i| m[[i, i]]).collect();
    eig.sort_by(|a, b| a.partial_cmp(b).unwrap());
    eig
}

/// Outer product `g g^T`.
pub fn outer(g: &Array1<f64>) -> Array2<f64> {
    let n = g.len();
    let mut m = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            m[[i, j]] = g[i] * g[j];
        }
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr2;

    #[test]
    fn cholesky_solve_roundtrip() {
        let a = arr2(&[[4.0, 1.0, 0.5], [1.0, 3.0, 0.2], [0.5, 0.2, 2.0]]);
        let b = Array1::from(vec![1.0, -2.0, 0.5]);
        let x = spd_solve(&a, &b).unwrap();
        let r = a.dot(&x) - &b;
        assert!(r.dot(&r).sqrt() < 1e-12);
    }

    #[test]
    fn inverse_matches_identity() {
        let a = arr2(&[[2.0, 0.3], [0.3, 1.5]]);
        let inv = spd_inverse(&a).unwrap();
        let id = a.dot(&inv);
        assert!((id[[0, 0]] - 1.0).abs() < 1e-12);
        assert!((id[[1, 1]] - 1.0).abs() < 1e-12);
        assert!(id[[0, 1]].abs() < 1e-12);
    }

    #[test]
    fn non_psd_rejected() {
        let a = arr2(&[[1.0, 2.0], [2.0, 1.0]]);
        assert!(cholesky(&a).is_err());
    }

    #[test]
    fn power_iteration_finds_top_eigenvalue() {
        let a = arr2(&[[4.0, 0.0], [0.0, 1.0]]);
        assert!((lambda_max(&a, 100) - 4.0).abs() < 1e-9);
    }

    #[test]
    fn jacobi_eigenvalues_diag() {
        let a = arr2(&[[3.0, 1.0], [1.0, 3.0]]);
        let eig = symmetric_eigenvalues(&a);
        assert!((eig[0] - 2.0).abs() < 1e-9);
        assert!((eig[1] - 4.0).abs() < 1e-9);
    }
}

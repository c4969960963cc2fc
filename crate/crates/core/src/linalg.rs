//! Small dense helpers: a cyclic Jacobi eigensolver for symmetric matrices,
//! seeded random orthogonal matrices, and a few norms.
//!
//! The Jacobi solver is the reference path for the dense analysis code. It
//! is O(n³) per sweep and meant for n in the low hundreds.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::{Matrix, Vector};

#[derive(Debug, Error, PartialEq)]
pub enum LinalgError {
    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },
    #[error("matrix contains non-finite entries")]
    NonFinite,
    #[error("Jacobi iteration did not converge in {sweeps} sweeps (off-diagonal norm {off:e})")]
    NoConvergence { sweeps: usize, off: f64 },
}

/// Eigendecomposition of a symmetric matrix, eigenvalues sorted largest first.
#[derive(Debug, Clone)]
pub struct SymmetricEigen {
    pub values: Vector,
    /// Column `i` is the unit eigenvector for `values[i]`.
    pub vectors: Matrix,
}

const JACOBI_MAX_SWEEPS: usize = 100;

/// Cyclic Jacobi eigendecomposition of the symmetric part of `a`.
pub fn jacobi_eigen(a: &Matrix) -> Result<SymmetricEigen, LinalgError> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(LinalgError::NotSquare { rows: n, cols: a.ncols() });
    }
    if a.iter().any(|x| !x.is_finite()) {
        return Err(LinalgError::NonFinite);
    }
    let mut w = (a + a.transpose()) * 0.5;
    let mut v = Matrix::identity(n, n);
    let scale = w.norm().max(f64::MIN_POSITIVE);

    let mut converged = n < 2;
    for _ in 0..JACOBI_MAX_SWEEPS {
        if off_diagonal_norm(&w) <= 1e-15 * scale {
            converged = true;
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = w[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (w[(q, q)] - w[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + theta.hypot(1.0));
                let c = 1.0 / t.hypot(1.0);
                let s = t * c;
                for k in 0..n {
                    let akp = w[(k, p)];
                    let akq = w[(k, q)];
                    w[(k, p)] = c * akp - s * akq;
                    w[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = w[(p, k)];
                    let aqk = w[(q, k)];
                    w[(p, k)] = c * apk - s * aqk;
                    w[(q, k)] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    if !converged {
        let off = off_diagonal_norm(&w);
        if off > 1e-12 * scale {
            return Err(LinalgError::NoConvergence { sweeps: JACOBI_MAX_SWEEPS, off });
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| w[(j, j)].total_cmp(&w[(i, i)]));
    let values = Vector::from_iterator(n, order.iter().map(|&i| w[(i, i)]));
    let vectors = v.select_columns(&order);
    Ok(SymmetricEigen { values, vectors })
}

fn off_diagonal_norm(w: &Matrix) -> f64 {
    let n = w.nrows();
    let mut s = 0.0;
    for j in 0..n {
        for i in 0..n {
            if i != j {
                s += w[(i, j)] * w[(i, j)];
            }
        }
    }
    s.sqrt()
}

/// Haar-distributed random orthogonal matrix (QR of a Gaussian matrix with
/// the sign of R's diagonal folded into Q).
pub fn random_orthogonal(n: usize, rng: &mut ChaCha8Rng) -> Matrix {
    let g = Matrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let qr = g.qr();
    let r = qr.r();
    let mut q = qr.q();
    for j in 0..n {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

/// Standard-normal vector scaled to unit Euclidean norm.
pub fn random_unit_vector(n: usize, rng: &mut ChaCha8Rng) -> Vector {
    let mut v = Vector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let norm = v.norm();
    if norm > 0.0 {
        v /= norm;
    }
    v
}

/// Largest absolute entry.
pub fn max_abs(m: &Matrix) -> f64 {
    m.iter().fold(0.0, |acc, x| acc.max(x.abs()))
}

/// `max |AᵀA - I|` for a matrix with (supposedly) orthonormal columns.
pub fn orthonormality_error(a: &Matrix) -> f64 {
    let gram = a.transpose() * a;
    let k = gram.nrows();
    max_abs(&(gram - Matrix::identity(k, k)))
}

/// `V diag(d) Vᵀ`.
pub fn from_eigenpairs(vectors: &Matrix, values: &Vector) -> Matrix {
    let mut scaled = vectors.clone();
    for (j, &d) in values.iter().enumerate() {
        scaled.column_mut(j).scale_mut(d);
    }
    scaled * vectors.transpose()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn jacobi_two_by_two() {
        let a = Matrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        let e = jacobi_eigen(&a).unwrap();
        assert!((e.values[0] - 1.0).abs() < 1e-14);
        assert!((e.values[1] + 1.0).abs() < 1e-14);
        let s = std::f64::consts::FRAC_1_SQRT_2;
        assert!((e.vectors[(0, 0)].abs() - s).abs() < 1e-14);
    }

    #[test]
    fn jacobi_matches_nalgebra_on_random_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = Matrix::from_fn(40, 40, |_, _| rng.sample::<f64, _>(StandardNormal));
        let a = &g + g.transpose();
        let e = jacobi_eigen(&a).unwrap();
        let mut reference: Vec<f64> = a.clone().symmetric_eigen().eigenvalues.iter().copied().collect();
        reference.sort_by(|x, y| y.total_cmp(x));
        for (x, y) in e.values.iter().zip(&reference) {
            assert!((x - y).abs() < 1e-11, "{x} vs {y}");
        }
        assert!(orthonormality_error(&e.vectors) < 1e-12);
        let back = from_eigenpairs(&e.vectors, &e.values);
        assert!(max_abs(&(back - a)) < 1e-11);
    }

    #[test]
    fn jacobi_rejects_non_square_and_nan() {
        assert!(matches!(jacobi_eigen(&Matrix::zeros(2, 3)), Err(LinalgError::NotSquare { .. })));
        let mut a = Matrix::identity(2, 2);
        a[(0, 1)] = f64::NAN;
        assert_eq!(jacobi_eigen(&a).unwrap_err(), LinalgError::NonFinite);
    }

    #[test]
    fn random_orthogonal_is_orthogonal_and_seeded() {
        let q1 = random_orthogonal(30, &mut ChaCha8Rng::seed_from_u64(5));
        let q2 = random_orthogonal(30, &mut ChaCha8Rng::seed_from_u64(5));
        assert_eq!(q1, q2);
        assert!(orthonormality_error(&q1) < 1e-13);
    }
}

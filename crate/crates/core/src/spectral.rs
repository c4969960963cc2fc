//! Extreme spectrum estimation.
//!
//! [`lanczos`] builds an orthonormal Krylov basis `U` and a symmetric
//! tridiagonal `T = UᵀAU` using only products `v ↦ Av`, with full
//! reorthogonalization (two modified Gram-Schmidt passes per step).
//! [`tridiag_eigh`] diagonalizes `T` by implicit QL with Wilkinson shifts, and
//! [`ese`] combines the two on a Hessian-vector-product operator to return the
//! `k` largest and `ℓ` smallest Ritz pairs.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::linalg::random_unit_vector;
use crate::objective::Objective;
use crate::{Matrix, Vector};

/// Floor applied to `|λ̂|` before inverting it.
pub const EPS_DIV: f64 = 1e-8;

/// Residual norm below which the Krylov space is treated as exhausted,
/// relative to the largest tridiagonal entry seen so far (and at least 1).
pub const BREAKDOWN_TOL: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum SpectralError {
    #[error("invalid arguments: {0}")]
    InvalidArguments(String),
    #[error("operator returned non-finite values at Lanczos iteration {iteration}")]
    NonFinite { iteration: usize },
    #[error("insufficient Krylov dimension: Lanczos broke down after {achieved} steps, {needed} eigenpairs requested")]
    InsufficientKrylovDimension { achieved: usize, needed: usize },
    #[error("tridiagonal QL did not converge after {iterations} iterations")]
    NoConvergence { iterations: usize },
}

/// Number of Lanczos iterations: `max(4(k+ℓ), ⌈2 ln n⌉)`, clamped to `n`.
pub fn heuristic_m(n: usize, k: usize, l: usize) -> Result<usize, SpectralError> {
    let wanted = k + l;
    if n == 0 || wanted == 0 {
        return Err(SpectralError::InvalidArguments(format!("need n >= 1 and k + l >= 1 (n = {n}, k + l = {wanted})")));
    }
    if wanted > n {
        return Err(SpectralError::InvalidArguments(format!("k + l = {wanted} exceeds dimension {n}")));
    }
    let log_term = (2.0 * (n as f64).ln()).ceil() as usize;
    Ok((4 * wanted).max(log_term).min(n))
}

/// Output of [`lanczos`].
#[derive(Debug, Clone)]
pub struct LanczosFactorization {
    /// `n × m′` orthonormal basis.
    pub basis: Matrix,
    /// Diagonal of `T`, length `m′`.
    pub alpha: Vec<f64>,
    /// Off-diagonal of `T`, length `m′ − 1`.
    pub beta: Vec<f64>,
    /// Iterations requested.
    pub requested: usize,
    /// Set when the residual vanished before `requested` steps, so `m′ < m`.
    pub breakdown: bool,
}

impl LanczosFactorization {
    pub fn steps(&self) -> usize {
        self.alpha.len()
    }

    pub fn tridiagonal(&self) -> Matrix {
        let m = self.steps();
        let mut t = Matrix::from_diagonal(&Vector::from_column_slice(&self.alpha));
        for (i, &b) in self.beta.iter().enumerate() {
            t[(i, i + 1)] = b;
            t[(i + 1, i)] = b;
        }
        debug_assert_eq!(t.nrows(), m);
        t
    }
}

/// Lanczos with full reorthogonalization, started from a seeded random unit
/// vector.
pub fn lanczos<F>(mut apply: F, n: usize, m: usize, seed: u64) -> Result<LanczosFactorization, SpectralError>
where
    F: FnMut(&Vector) -> Vector,
{
    if m == 0 || m > n {
        return Err(SpectralError::InvalidArguments(format!("need 1 <= m <= n (m = {m}, n = {n})")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut q = random_unit_vector(n, &mut rng);

    let mut basis: Vec<Vector> = Vec::with_capacity(m);
    let mut alpha = Vec::with_capacity(m);
    let mut beta: Vec<f64> = Vec::with_capacity(m.saturating_sub(1));
    let mut breakdown = false;
    let mut scale: f64 = 1.0;

    for j in 0..m {
        let mut w = apply(&q);
        if w.len() != n || w.iter().any(|x| !x.is_finite()) {
            return Err(SpectralError::NonFinite { iteration: j });
        }
        let a = q.dot(&w);
        w.axpy(-a, &q, 1.0);
        if let (Some(prev), Some(&b)) = (basis.last(), beta.last()) {
            w.axpy(-b, prev, 1.0);
        }
        basis.push(q);
        alpha.push(a);
        for _ in 0..2 {
            for u in &basis {
                let c = u.dot(&w);
                w.axpy(-c, u, 1.0);
            }
        }
        if j + 1 == m {
            break;
        }
        let b = w.norm();
        scale = scale.max(a.abs()).max(b);
        if b < BREAKDOWN_TOL * scale {
            breakdown = true;
            break;
        }
        beta.push(b);
        q = w / b;
    }

    Ok(LanczosFactorization { basis: Matrix::from_columns(&basis), alpha, beta, requested: m, breakdown })
}

/// Eigendecomposition of a symmetric tridiagonal matrix given by its diagonal
/// and off-diagonal. Eigenvalues are returned largest first, with matching
/// eigenvector columns in `Q`.
pub fn tridiag_eigh(diag: &[f64], off: &[f64]) -> Result<(Vector, Matrix), SpectralError> {
    let n = diag.len();
    if n == 0 || off.len() + 1 != n {
        return Err(SpectralError::InvalidArguments(format!(
            "tridiagonal needs m >= 1 and m - 1 off-diagonal entries (m = {n}, off = {})",
            off.len()
        )));
    }
    let mut d = diag.to_vec();
    // e[i] couples d[i] and d[i+1]; e[n-1] is padding.
    let mut e = off.to_vec();
    e.push(0.0);
    let mut z = Matrix::identity(n, n);
    let limit = 50 * n;
    let mut iterations = 0;

    for l in 0..n {
        loop {
            let mut m = l;
            while m + 1 < n {
                let dd = d[m].abs() + d[m + 1].abs();
                if e[m].abs() + dd == dd {
                    break;
                }
                m += 1;
            }
            if m == l {
                break;
            }
            iterations += 1;
            if iterations > limit {
                return Err(SpectralError::NoConvergence { iterations: limit });
            }
            // Wilkinson shift from the leading 2x2 block.
            let mut g = (d[l + 1] - d[l]) / (2.0 * e[l]);
            let mut r = g.hypot(1.0);
            g = d[m] - d[l] + e[l] / (g + r.copysign(g));
            let (mut s, mut c, mut p) = (1.0, 1.0, 0.0);
            let mut underflow = false;
            for i in (l..m).rev() {
                let f = s * e[i];
                let b = c * e[i];
                r = f.hypot(g);
                e[i + 1] = r;
                if r == 0.0 {
                    d[i + 1] -= p;
                    e[m] = 0.0;
                    underflow = true;
                    break;
                }
                s = f / r;
                c = g / r;
                g = d[i + 1] - p;
                r = (d[i] - g) * s + 2.0 * c * b;
                p = s * r;
                d[i + 1] = g + p;
                g = c * r - b;
                for k in 0..n {
                    let zf = z[(k, i + 1)];
                    z[(k, i + 1)] = s * z[(k, i)] + c * zf;
                    z[(k, i)] = c * z[(k, i)] - s * zf;
                }
            }
            if underflow {
                continue;
            }
            d[l] -= p;
            e[l] = g;
            e[m] = 0.0;
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| d[j].total_cmp(&d[i]));
    let values = Vector::from_iterator(n, order.iter().map(|&i| d[i]));
    Ok((values, z.select_columns(&order)))
}

/// The `k` largest and `ℓ` smallest Ritz pairs of a Hessian.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumEstimate {
    /// `k` largest estimates (descending) followed by `ℓ` smallest (descending).
    pub values: Vector,
    /// `n × (k+ℓ)`, orthonormal columns matching `values`.
    pub vectors: Matrix,
    /// `1 / max(|λ̂ᵢ|, EPS_DIV)`.
    pub inv_abs: Vector,
    pub k: usize,
    pub l: usize,
    /// Largest and smallest Ritz values of the full tridiagonal. With `ℓ = 0`
    /// the smallest one is the only available proxy for `λ_n`.
    pub ritz_max: f64,
    pub ritz_min: f64,
    /// Lanczos steps actually performed.
    pub krylov_dim: usize,
    pub breakdown: bool,
}

impl SpectrumEstimate {
    /// Build an estimate from known eigenpairs (for tests and analysis).
    /// `values` must be ordered as `[k largest desc, ℓ smallest desc]`.
    pub fn from_eigenpairs(values: Vector, vectors: Matrix, k: usize, l: usize, ritz_min: f64, ritz_max: f64) -> Self {
        assert_eq!(values.len(), k + l);
        assert_eq!(vectors.ncols(), k + l);
        let inv_abs = inverse_magnitudes(&values);
        Self { values, vectors, inv_abs, k, l, ritz_max, ritz_min, krylov_dim: k + l, breakdown: false }
    }

    pub fn dim(&self) -> usize {
        self.vectors.nrows()
    }

    /// `V̂ (V̂ᵀ x)`.
    pub fn project(&self, x: &Vector) -> Vector {
        &self.vectors * (self.vectors.tr_mul(x))
    }
}

/// `1 / max(|λ|, EPS_DIV)` elementwise.
pub fn inverse_magnitudes(values: &Vector) -> Vector {
    values.map(|x| 1.0 / x.abs().max(EPS_DIV))
}

/// Estimate the `k` largest and `ℓ` smallest eigenpairs of `∇²f(θ)`.
pub fn ese<P: Objective + ?Sized>(
    problem: &P,
    theta: &Vector,
    k: usize,
    l: usize,
    seed: u64,
) -> Result<SpectrumEstimate, SpectralError> {
    let n = problem.dim();
    if theta.len() != n {
        return Err(SpectralError::InvalidArguments(format!("theta has length {}, problem dimension is {n}", theta.len())));
    }
    let m = heuristic_m(n, k, l)?;
    let fact = lanczos(|v| problem.hvp(theta, v), n, m, seed)?;
    let steps = fact.steps();
    if steps < k + l {
        return Err(SpectralError::InsufficientKrylovDimension { achieved: steps, needed: k + l });
    }
    let off = &fact.beta[..steps - 1];
    let (lambda, q) = tridiag_eigh(&fact.alpha, off)?;

    let picks: Vec<usize> = (0..k).chain(steps - l..steps).collect();
    let values = Vector::from_iterator(k + l, picks.iter().map(|&i| lambda[i]));
    let vectors = &fact.basis * q.select_columns(&picks);
    let inv_abs = inverse_magnitudes(&values);
    Ok(SpectrumEstimate {
        values,
        vectors,
        inv_abs,
        k,
        l,
        ritz_max: lambda[0],
        ritz_min: lambda[steps - 1],
        krylov_dim: steps,
        breakdown: fact.breakdown,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{jacobi_eigen, max_abs, orthonormality_error};
    use rand::Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn heuristic_m_examples() {
        assert_eq!(heuristic_m(100, 10, 0).unwrap(), 40);
        assert_eq!(heuristic_m(4_000_000, 10, 0).unwrap(), 40);
        assert_eq!(heuristic_m(3, 1, 1).unwrap(), 3);
        // 2 ln(1e9) ≈ 41.4 beats 4(k+l) = 8.
        assert_eq!(heuristic_m(1_000_000_000, 1, 1).unwrap(), 42);
        assert!(heuristic_m(3, 2, 2).is_err());
        assert!(heuristic_m(3, 0, 0).is_err());
    }

    #[test]
    fn lanczos_identity_breaks_down_and_flags() {
        let fact = lanczos(|v| v.clone(), 5, 3, 1).unwrap();
        assert!(fact.breakdown);
        assert!(fact.steps() < 3);
        assert!(fact.alpha.iter().all(|a| (a - 1.0).abs() < 1e-14));
    }

    #[test]
    fn lanczos_two_by_two_exhausts_space() {
        let a = Matrix::from_diagonal(&Vector::from_vec(vec![4.0, 1.0]));
        let fact = lanczos(|v| &a * v, 2, 2, 7).unwrap();
        let (lam, _) = tridiag_eigh(&fact.alpha, &fact.beta).unwrap();
        assert!((lam[0] - 4.0).abs() < 1e-10);
        assert!((lam[1] - 1.0).abs() < 1e-10);
    }

    #[test]
    fn lanczos_reports_non_finite_iteration() {
        let mut calls = 0;
        let err = lanczos(
            |v| {
                calls += 1;
                if calls == 3 {
                    Vector::from_element(v.len(), f64::NAN)
                } else {
                    v * 2.0 + Vector::from_fn(v.len(), |i, _| v[(i + 1) % v.len()])
                }
            },
            6,
            5,
            0,
        )
        .unwrap_err();
        assert_eq!(err, SpectralError::NonFinite { iteration: 2 });
    }

    #[test]
    fn lanczos_invariants_on_random_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let g = Matrix::from_fn(30, 30, |_, _| rng.sample::<f64, _>(StandardNormal));
        let a = &g + g.transpose();
        let fact = lanczos(|v| &a * v, 30, 20, 3).unwrap();
        assert!(orthonormality_error(&fact.basis) <= 1e-8);
        let t = fact.tridiagonal();
        let projected = fact.basis.transpose() * &a * &fact.basis;
        assert!(max_abs(&(projected - &t)) <= 1e-6 * max_abs(&t));
    }

    #[test]
    fn lanczos_is_deterministic_per_seed() {
        let a = Matrix::from_fn(12, 12, |i, j| 1.0 / (1.0 + i as f64 + j as f64));
        let x = lanczos(|v| &a * v, 12, 6, 42).unwrap();
        let y = lanczos(|v| &a * v, 12, 6, 42).unwrap();
        assert_eq!(x.basis, y.basis);
        assert_eq!(x.alpha, y.alpha);
    }

    #[test]
    fn tridiag_diagonal_input() {
        let (lam, q) = tridiag_eigh(&[2.0, 2.0], &[0.0]).unwrap();
        assert_eq!(lam.as_slice(), &[2.0, 2.0]);
        assert_eq!(q, Matrix::identity(2, 2));
    }

    #[test]
    fn tridiag_two_by_two_closed_form() {
        let (lam, q) = tridiag_eigh(&[0.0, 0.0], &[1.0]).unwrap();
        assert!((lam[0] - 1.0).abs() < 1e-15 && (lam[1] + 1.0).abs() < 1e-15);
        let s = std::f64::consts::FRAC_1_SQRT_2;
        // Columns (1,1)/√2 and (1,-1)/√2 up to sign.
        assert!((q[(0, 0)].abs() - s).abs() < 1e-15 && (q[(1, 0)] - q[(0, 0)]).abs() < 1e-15);
        assert!((q[(0, 1)].abs() - s).abs() < 1e-15 && (q[(1, 1)] + q[(0, 1)]).abs() < 1e-15);
    }

    #[test]
    fn tridiag_matches_jacobi_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let d: Vec<f64> = (0..12).map(|_| rng.sample(StandardNormal)).collect();
        let e: Vec<f64> = (0..11).map(|_| rng.sample(StandardNormal)).collect();
        let (lam, q) = tridiag_eigh(&d, &e).unwrap();
        let fact = LanczosFactorization { basis: Matrix::identity(12, 12), alpha: d, beta: e, requested: 12, breakdown: false };
        let t = fact.tridiagonal();
        let oracle = jacobi_eigen(&t).unwrap();
        for (x, y) in lam.iter().zip(oracle.values.iter()) {
            assert!((x - y).abs() <= 1e-10, "{x} vs {y}");
        }
        let norm = max_abs(&t);
        let residual = &t * &q - &q * Matrix::from_diagonal(&lam);
        assert!(max_abs(&residual) <= 1e-10 * norm);
        assert!(orthonormality_error(&q) <= 1e-10);
    }

    #[test]
    fn tridiag_rejects_bad_shapes() {
        assert!(tridiag_eigh(&[], &[]).is_err());
        assert!(tridiag_eigh(&[1.0, 2.0], &[]).is_err());
    }

    #[test]
    fn single_entry_tridiagonal() {
        let (lam, q) = tridiag_eigh(&[3.5], &[]).unwrap();
        assert_eq!(lam[0], 3.5);
        assert_eq!(q[(0, 0)], 1.0);
    }
}

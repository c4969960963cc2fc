use rand::Rng;

use super::{rng, stream, ProblemError};
use crate::linalg::{from_eigenpairs, orthonormality_error, random_orthogonal, random_unit_vector};
use crate::objective::Objective;
use crate::{Matrix, Vector};

/// Up to this dimension `H` is materialized and applied directly; above it
/// products go through `V(λ ⊙ (Vᵀv))`.
pub const DENSE_LIMIT: usize = 200;

/// `f(θ) = ½θᵀHθ` with `H = V diag(λ) Vᵀ` known exactly.
#[derive(Debug, Clone)]
pub struct QuadraticProblem {
    values: Vector,
    vectors: Matrix,
    dense: Option<Matrix>,
    theta0: Vector,
}

impl QuadraticProblem {
    /// `values` sorted descending, `vectors` orthonormal with matching
    /// columns.
    pub fn from_eigenpairs(values: Vector, vectors: Matrix, theta0: Vector) -> Result<Self, ProblemError> {
        let n = values.len();
        if n == 0 || vectors.shape() != (n, n) || theta0.len() != n {
            return Err(ProblemError::InvalidArguments(format!(
                "need n eigenvalues, an n x n basis and an n-vector start, got {n}, {:?}, {}",
                vectors.shape(),
                theta0.len()
            )));
        }
        if values.iter().zip(values.iter().skip(1)).any(|(a, b)| a < b) {
            return Err(ProblemError::InvalidArguments("eigenvalues must be sorted descending".into()));
        }
        if values[n - 1] <= 0.0 {
            return Err(ProblemError::InvalidArguments(format!("H must be positive definite, smallest eigenvalue {}", values[n - 1])));
        }
        let err = orthonormality_error(&vectors);
        if err > 1e-10 {
            return Err(ProblemError::InvalidArguments(format!("basis is not orthonormal (error {err:e})")));
        }
        let dense = (n <= DENSE_LIMIT).then(|| from_eigenpairs(&vectors, &values));
        Ok(Self { values, vectors, dense, theta0 })
    }

    /// `H = diag(d)` in the given index order.
    pub fn diagonal(d: &[f64], theta0: Vector) -> Result<Self, ProblemError> {
        let n = d.len();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&i, &j| d[j].total_cmp(&d[i]));
        let values = Vector::from_iterator(n, order.iter().map(|&i| d[i]));
        let mut vectors = Matrix::zeros(n, n);
        for (col, &i) in order.iter().enumerate() {
            vectors[(i, col)] = 1.0;
        }
        Self::from_eigenpairs(values, vectors, theta0)
    }

    /// Exact spectrum, descending.
    pub fn eigenvalues(&self) -> &Vector {
        &self.values
    }

    /// Column `i` is the eigenvector of `eigenvalues()[i]`.
    pub fn eigenvectors(&self) -> &Matrix {
        &self.vectors
    }

    pub fn theta0(&self) -> &Vector {
        &self.theta0
    }

    /// `H` as a dense matrix (computed on demand above [`DENSE_LIMIT`]).
    pub fn dense_hessian(&self) -> Matrix {
        self.dense.clone().unwrap_or_else(|| from_eigenpairs(&self.vectors, &self.values))
    }

    /// `V(λ ⊙ (Vᵀv))`, never using the dense matrix.
    pub fn structured_hvp(&self, v: &Vector) -> Vector {
        &self.vectors * self.vectors.tr_mul(v).component_mul(&self.values)
    }

    fn apply(&self, v: &Vector) -> Vector {
        match &self.dense {
            Some(h) => h * v,
            None => self.structured_hvp(v),
        }
    }

    pub fn lambda_max(&self) -> f64 {
        self.values[0]
    }

    pub fn lambda_min(&self) -> f64 {
        self.values[self.values.len() - 1]
    }
}

impl Objective for QuadraticProblem {
    fn dim(&self) -> usize {
        self.values.len()
    }

    fn value(&self, theta: &Vector) -> f64 {
        match &self.dense {
            Some(h) => 0.5 * theta.dot(&(h * theta)),
            None => {
                let c = self.vectors.tr_mul(theta);
                0.5 * c.iter().zip(self.values.iter()).map(|(ci, li)| li * ci * ci).sum::<f64>()
            }
        }
    }

    fn gradient(&self, theta: &Vector) -> Vector {
        self.apply(theta)
    }

    fn hvp(&self, _theta: &Vector, v: &Vector) -> Vector {
        self.apply(v)
    }
}

/// Eigenvectors of a seeded symmetric matrix with `U(0,1)` entries, ordered
/// by that matrix's eigenvalues, largest first.
fn uniform_symmetric_basis(n: usize, seed: u64) -> Matrix {
    let mut r = rng(seed, stream::BASIS);
    let mut a = Matrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let x: f64 = r.random();
            a[(i, j)] = x;
            a[(j, i)] = x;
        }
    }
    let eig = a.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    eig.eigenvectors.select_columns(&order)
}

/// Spectrum `(λ₁, 1, 1.5⁻¹, …, 1.5^{−(n−2)})` with eigenvectors of a random
/// symmetric uniform matrix; unit-norm Gaussian start.
pub fn gen_spectrum_quadratic(n: usize, lambda_1: f64, seed: u64) -> Result<QuadraticProblem, ProblemError> {
    if n < 2 || !(lambda_1 > 1.0) {
        return Err(ProblemError::InvalidArguments(format!("need n >= 2 and lambda_1 > 1, got n = {n}, lambda_1 = {lambda_1}")));
    }
    let values = Vector::from_fn(n, |i, _| if i == 0 { lambda_1 } else { 1.5f64.powi(-(i as i32 - 1)) });
    let vectors = uniform_symmetric_basis(n, seed);
    let theta0 = random_unit_vector(n, &mut rng(seed, stream::START));
    QuadraticProblem::from_eigenpairs(values, vectors, theta0)
}

/// First index of the rotated block in `f_{b,ζ}`.
pub fn fbzeta_block_start(n: usize, zeta: usize) -> usize {
    (n - zeta).div_ceil(2)
}

/// `f_{b,ζ}`: `n = 100`, diagonal `0.001·bⁱ` (`i = 1..n`) with a centred
/// `ζ × ζ` block rotated by a random orthogonal matrix. The start is the same
/// point in eigen-coordinates for every `ζ`, so `f(θ₀)` only depends on `b`.
pub fn gen_fbzeta_quadratic(b: f64, zeta: usize, seed: u64) -> Result<QuadraticProblem, ProblemError> {
    const N: usize = 100;
    if !(1.1..=1.17).contains(&b) {
        return Err(ProblemError::InvalidArguments(format!("b must lie in [1.1, 1.17], got {b}")));
    }
    if zeta > N {
        return Err(ProblemError::InvalidArguments(format!("zeta must be at most {N}, got {zeta}")));
    }
    let diag: Vec<f64> = (1..=N).map(|i| 0.001 * b.powi(i as i32)).collect();
    let mut basis = Matrix::identity(N, N);
    if zeta > 0 {
        let s = fbzeta_block_start(N, zeta);
        let q = random_orthogonal(zeta, &mut rng(seed, stream::BASIS));
        basis.view_mut((s, s), (zeta, zeta)).copy_from(&q);
    }
    let theta_base = random_unit_vector(N, &mut rng(seed, stream::START));
    let theta0 = &basis * theta_base;

    // Eigenvalues increase with the index; store them descending.
    let order: Vec<usize> = (0..N).rev().collect();
    let values = Vector::from_iterator(N, order.iter().map(|&i| diag[i]));
    QuadraticProblem::from_eigenpairs(values, basis.select_columns(&order), theta0)
}

/// Ten eigenvalues evenly spaced in `[9, 10]` and ninety in `[0.01, 0.1]`,
/// random orthonormal basis, unit-norm Gaussian start.
pub fn gen_appendix_e_quadratic(seed: u64) -> Result<QuadraticProblem, ProblemError> {
    let linspace = |hi: f64, lo: f64, count: usize| (0..count).map(move |i| hi - (hi - lo) * i as f64 / (count - 1) as f64);
    let values = Vector::from_iterator(100, linspace(10.0, 9.0, 10).chain(linspace(0.1, 0.01, 90)));
    let vectors = random_orthogonal(100, &mut rng(seed, stream::BASIS));
    let theta0 = random_unit_vector(100, &mut rng(seed, stream::START));
    QuadraticProblem::from_eigenpairs(values, vectors, theta0)
}

/// Random SPD matrix with distinct eigenvalues log-uniform in `[0.01, 10]`
/// and a random orthonormal basis.
pub fn gen_random_spd(n: usize, seed: u64) -> Result<QuadraticProblem, ProblemError> {
    if n == 0 {
        return Err(ProblemError::InvalidArguments("n must be positive".into()));
    }
    let mut r = rng(seed, stream::FEATURES);
    let mut values: Vec<f64> = (0..n).map(|_| 10f64.powf(r.random_range(-2.0..1.0))).collect();
    values.sort_by(|a, b| b.total_cmp(a));
    let vectors = random_orthogonal(n, &mut rng(seed, stream::BASIS));
    let theta0 = random_unit_vector(n, &mut rng(seed, stream::START));
    QuadraticProblem::from_eigenpairs(Vector::from_vec(values), vectors, theta0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_spectrum_formula() {
        let p = gen_spectrum_quadratic(4, 5.0, 0).unwrap();
        let expected = [5.0, 1.0, 2.0 / 3.0, 4.0 / 9.0];
        for (a, b) in p.eigenvalues().iter().zip(expected) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!((p.theta0().norm() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn generators_are_deterministic() {
        let a = gen_spectrum_quadratic(30, 200.0, 9).unwrap();
        let b = gen_spectrum_quadratic(30, 200.0, 9).unwrap();
        assert_eq!(a.dense_hessian(), b.dense_hessian());
        assert_eq!(a.theta0(), b.theta0());
        let c = gen_spectrum_quadratic(30, 200.0, 10).unwrap();
        assert_ne!(a.dense_hessian(), c.dense_hessian());
    }

    #[test]
    fn fbzeta_without_block_is_exactly_diagonal() {
        let p = gen_fbzeta_quadratic(1.12, 0, 3).unwrap();
        let h = p.dense_hessian();
        for i in 0..100 {
            for j in 0..100 {
                let expected = if i == j { 0.001 * 1.12f64.powi(i as i32 + 1) } else { 0.0 };
                assert_eq!(h[(i, j)], expected);
            }
        }
    }

    #[test]
    fn fbzeta_rejects_bad_arguments() {
        assert!(gen_fbzeta_quadratic(1.12, 101, 0).is_err());
        assert!(gen_fbzeta_quadratic(1.3, 10, 0).is_err());
    }

    #[test]
    fn fbzeta_block_is_centred() {
        assert_eq!(fbzeta_block_start(100, 50), 25);
        assert_eq!(fbzeta_block_start(100, 90), 5);
        assert_eq!(fbzeta_block_start(100, 91), 5);
        let p = gen_fbzeta_quadratic(1.16, 50, 1).unwrap();
        let h = p.dense_hessian();
        assert_eq!(h[(24, 25)], 0.0);
        assert_ne!(h[(25, 26)], 0.0);
        assert_eq!(h[(75, 74)], 0.0);
    }

    #[test]
    fn appendix_e_endpoints() {
        let p = gen_appendix_e_quadratic(0).unwrap();
        let l = p.eigenvalues();
        assert_eq!(l[0], 10.0);
        assert_eq!(l[9], 9.0);
        assert!((l[10] - 0.1).abs() < 1e-15);
        assert!((l[99] - 0.01).abs() < 1e-15);
    }

    #[test]
    fn diagonal_constructor_orders_spectrum() {
        let p = QuadraticProblem::diagonal(&[1.0, 3.0, 2.0], Vector::from_element(3, 1.0)).unwrap();
        assert_eq!(p.eigenvalues().as_slice(), &[3.0, 2.0, 1.0]);
        let g = p.gradient(&Vector::from_column_slice(&[1.0, 1.0, 1.0]));
        assert_eq!(g.as_slice(), &[1.0, 3.0, 2.0]);
    }

    #[test]
    fn invalid_eigenpairs_rejected() {
        let v = Matrix::identity(2, 2);
        let t = Vector::zeros(2);
        assert!(QuadraticProblem::from_eigenpairs(Vector::from_column_slice(&[1.0, 2.0]), v.clone(), t.clone()).is_err());
        assert!(QuadraticProblem::from_eigenpairs(Vector::from_column_slice(&[1.0, -1.0]), v.clone(), t.clone()).is_err());
        assert!(QuadraticProblem::from_eigenpairs(Vector::from_column_slice(&[2.0, 1.0]), v * 2.0, t).is_err());
    }
}

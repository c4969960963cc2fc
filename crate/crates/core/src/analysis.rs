//! Dense verification of FOSI's implicit preconditioner on small quadratics.
//!
//! On `f(θ) = ½θᵀHθ` one FOSI step with a diagonal base preconditioner `q`
//! is `θ ← θ − P⁻¹∇f(θ)` with
//!
//! ```text
//! P⁻¹ = α V̂ diag(u) V̂ᵀ + η (I − V̂V̂ᵀ) diag(q) (I − V̂V̂ᵀ).
//! ```
//!
//! Everything here uses the exact eigendecomposition of `H` (cyclic Jacobi),
//! never the Lanczos estimate, so a failed check points at a formula rather
//! than at estimation error.

use thiserror::Error;

use crate::linalg::{from_eigenpairs, jacobi_eigen, max_abs, LinalgError, SymmetricEigen};
use crate::objective::Objective;
use crate::optim::{BaseOptimizer, OptimError};
use crate::spectral::{inverse_magnitudes, SpectrumEstimate};
use crate::{Matrix, Vector};

/// Largest dimension accepted by the dense routines.
pub const MAX_DENSE_DIM: usize = 200;

#[derive(Debug, Error, PartialEq)]
pub enum AnalysisError {
    #[error("invalid arguments: {0}")]
    InvalidArguments(String),
    #[error("Hessian is not positive definite (smallest eigenvalue {0:e})")]
    NotPositiveDefinite(f64),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// Dense analysis of FOSI's inverse preconditioner for one Hessian.
#[derive(Debug, Clone)]
pub struct PreconditionerReport {
    pub n: usize,
    pub k: usize,
    pub l: usize,
    pub alpha: f64,
    pub eta: f64,
    pub p_inv: Matrix,
    /// Descending.
    pub p_inv_eigenvalues: Vector,
    /// Eigenvalues of `P⁻¹H`, descending.
    pub effective_eigenvalues: Vector,
    /// `max |P⁻¹ − P⁻ᵀ|`.
    pub symmetry_residual: f64,
    pub min_p_inv_eigenvalue: f64,
    /// Exact spectrum of `H`, descending.
    pub hessian_eigenvalues: Vector,
    /// The `k` top and `ℓ` bottom exact eigenvectors.
    pub v_hat: Matrix,
    /// `λ̌`: the `n − k − ℓ` eigenvalues not covered by `V̂`, descending.
    pub complement: Vector,
    /// `max_i ‖P⁻¹H v̂ᵢ − α v̂ᵢ‖`.
    pub alpha_residual: f64,
    /// `λ₁ / λ_n`.
    pub kappa: f64,
    /// Ratio of extreme eigenvalues of `P⁻¹H`.
    pub kappa_eff: f64,
    pub cases: ConditionCases,
}

pub const REPORT_CSV_HEADER: [&str; 11] = [
    "n",
    "k",
    "l",
    "alpha",
    "eta",
    "kappa",
    "kappa_eff",
    "case",
    "symmetry_residual",
    "min_p_inv_eigenvalue",
    "alpha_residual",
];

impl PreconditionerReport {
    /// Case label when the effective condition number improves,
    /// `None` otherwise.
    pub fn case(&self) -> Option<u8> {
        self.cases.improved.then_some(self.cases.case)
    }

    /// Largest elementwise gap between the effective spectrum and the
    /// identity-preconditioner prediction `{α}^{k+ℓ} ∪ ηλ̌`.
    pub fn identity_spectrum_error(&self) -> f64 {
        let mut expected: Vec<f64> = std::iter::repeat_n(self.alpha, self.k + self.l)
            .chain(self.complement.iter().map(|x| self.eta * x))
            .collect();
        expected.sort_by(|a, b| b.total_cmp(a));
        self.effective_eigenvalues
            .iter()
            .zip(&expected)
            .fold(0.0, |acc, (a, b)| acc.max((a - b).abs()))
    }

    pub fn summary(&self) -> String {
        let case = self.case().map_or("none".to_string(), |c| c.to_string());
        format!(
            "n={} k={} l={} alpha={} eta={}\n  kappa={:.6e} kappa_eff={:.6e} case={}\n  \
             P^-1 symmetric residual={:.3e} min eigenvalue={:.6e}\n  alpha-eigenspace residual={:.3e}",
            self.n,
            self.k,
            self.l,
            self.alpha,
            self.eta,
            self.kappa,
            self.kappa_eff,
            case,
            self.symmetry_residual,
            self.min_p_inv_eigenvalue,
            self.alpha_residual,
        )
    }

    pub fn csv_row(&self) -> Vec<String> {
        vec![
            self.n.to_string(),
            self.k.to_string(),
            self.l.to_string(),
            self.alpha.to_string(),
            self.eta.to_string(),
            format!("{:e}", self.kappa),
            format!("{:e}", self.kappa_eff),
            self.case().map_or("none".to_string(), |c| c.to_string()),
            format!("{:e}", self.symmetry_residual),
            format!("{:e}", self.min_p_inv_eigenvalue),
            format!("{:e}", self.alpha_residual),
        ]
    }
}

/// Classification of `α` against `(ηλ_{n−ℓ}, ηλ_{k+1})`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConditionCases {
    /// 1: `α < ηλ_{n−ℓ}`; 2: `α` within the interval; 3: `α > ηλ_{k+1}`.
    pub case: u8,
    pub improved: bool,
    pub kappa: f64,
    pub kappa_eff: f64,
}

pub fn condition_number_cases(
    lambda_1: f64,
    lambda_k1: f64,
    lambda_nl: f64,
    lambda_n: f64,
    alpha: f64,
    eta: f64,
) -> Result<ConditionCases, AnalysisError> {
    if !(lambda_1 >= lambda_k1 && lambda_k1 >= lambda_nl && lambda_nl >= lambda_n && lambda_n > 0.0) {
        return Err(AnalysisError::InvalidArguments(format!(
            "need lambda_1 >= lambda_k+1 >= lambda_n-l >= lambda_n > 0, got {lambda_1}, {lambda_k1}, {lambda_nl}, {lambda_n}"
        )));
    }
    if !(alpha > 0.0 && eta > 0.0) {
        return Err(AnalysisError::InvalidArguments(format!("alpha and eta must be positive, got {alpha}, {eta}")));
    }
    let kappa = lambda_1 / lambda_n;
    let (case, kappa_eff) = if alpha < eta * lambda_nl {
        (1, eta * lambda_k1 / alpha)
    } else if alpha > eta * lambda_k1 {
        (3, alpha / (eta * lambda_nl))
    } else {
        (2, lambda_k1 / lambda_nl)
    };
    Ok(ConditionCases { case, improved: kappa_eff <= kappa, kappa, kappa_eff })
}

/// Exact eigenpairs of `H` split into the `V̂` block and the rest.
struct Split {
    eig: SymmetricEigen,
    picks: Vec<usize>,
    rest: Vec<usize>,
}

fn split(h: &Matrix, k: usize, l: usize) -> Result<Split, AnalysisError> {
    let n = h.nrows();
    if h.ncols() != n {
        return Err(LinalgError::NotSquare { rows: n, cols: h.ncols() }.into());
    }
    if n == 0 || n > MAX_DENSE_DIM {
        return Err(AnalysisError::InvalidArguments(format!("dense analysis needs 1 <= n <= {MAX_DENSE_DIM}, got {n}")));
    }
    if k + l == 0 || k + l >= n {
        return Err(AnalysisError::InvalidArguments(format!("need 1 <= k + l < n, got k = {k}, l = {l}, n = {n}")));
    }
    let asym = max_abs(&(h - h.transpose()));
    if asym > 1e-10 * max_abs(h).max(1.0) {
        return Err(AnalysisError::InvalidArguments(format!("H is not symmetric (residual {asym:e})")));
    }
    let eig = jacobi_eigen(h)?;
    let smallest = eig.values[n - 1];
    if smallest <= 0.0 {
        return Err(AnalysisError::NotPositiveDefinite(smallest));
    }
    let picks = (0..k).chain(n - l..n).collect();
    let rest = (k..n - l).collect();
    Ok(Split { eig, picks, rest })
}

/// `α V̂ diag(u) V̂ᵀ + η (I − V̂V̂ᵀ)`.
pub fn identity_inverse_preconditioner(v_hat: &Matrix, values: &Vector, alpha: f64, eta: f64) -> Matrix {
    let n = v_hat.nrows();
    let proj = v_hat * v_hat.transpose();
    from_eigenpairs(v_hat, &(inverse_magnitudes(values) * alpha)) + (Matrix::identity(n, n) - proj) * eta
}

/// `α V̂ diag(u) V̂ᵀ + η (I − V̂V̂ᵀ) diag(q) (I − V̂V̂ᵀ)`.
pub fn diagonal_inverse_preconditioner(v_hat: &Matrix, values: &Vector, q: &Vector, alpha: f64, eta: f64) -> Matrix {
    let n = v_hat.nrows();
    let comp = Matrix::identity(n, n) - v_hat * v_hat.transpose();
    let mut scaled = comp.clone();
    for (i, &qi) in q.iter().enumerate() {
        scaled.row_mut(i).scale_mut(qi);
    }
    from_eigenpairs(v_hat, &(inverse_magnitudes(values) * alpha)) + &comp * scaled * eta
}

/// The diagonal form `V diag([αu, η·1]) Vᵀ` over the full exact eigenbasis,
/// with `V`'s columns ordered as `[V̂, rest]`.
pub fn identity_inverse_preconditioner_eigenform(h: &Matrix, k: usize, l: usize, alpha: f64, eta: f64) -> Result<Matrix, AnalysisError> {
    let s = split(h, k, l)?;
    let order: Vec<usize> = s.picks.iter().chain(&s.rest).copied().collect();
    let v = s.eig.vectors.select_columns(&order);
    let u = inverse_magnitudes(&s.eig.values.select_rows(&s.picks));
    let diag = Vector::from_iterator(order.len(), u.iter().map(|x| alpha * x).chain(std::iter::repeat_n(eta, s.rest.len())));
    Ok(from_eigenpairs(&v, &diag))
}

pub fn effective_preconditioner_identity(h: &Matrix, k: usize, l: usize, alpha: f64, eta: f64) -> Result<PreconditionerReport, AnalysisError> {
    check_rates(alpha, eta)?;
    let s = split(h, k, l)?;
    let v_hat = s.eig.vectors.select_columns(&s.picks);
    let p_inv = identity_inverse_preconditioner(&v_hat, &s.eig.values.select_rows(&s.picks), alpha, eta);
    report(h, s, v_hat, p_inv, k, l, alpha, eta)
}

pub fn effective_preconditioner_diagonal(
    h: &Matrix,
    q: &Vector,
    k: usize,
    l: usize,
    alpha: f64,
    eta: f64,
) -> Result<PreconditionerReport, AnalysisError> {
    check_rates(alpha, eta)?;
    if q.len() != h.nrows() {
        return Err(AnalysisError::InvalidArguments(format!("q has length {}, H is {}x{}", q.len(), h.nrows(), h.nrows())));
    }
    if let Some(bad) = q.iter().find(|x| !(**x > 0.0 && x.is_finite())) {
        return Err(AnalysisError::InvalidArguments(format!("q must be positive and finite, found {bad}")));
    }
    let s = split(h, k, l)?;
    let v_hat = s.eig.vectors.select_columns(&s.picks);
    let p_inv = diagonal_inverse_preconditioner(&v_hat, &s.eig.values.select_rows(&s.picks), q, alpha, eta);
    report(h, s, v_hat, p_inv, k, l, alpha, eta)
}

fn check_rates(alpha: f64, eta: f64) -> Result<(), AnalysisError> {
    if alpha > 0.0 && eta > 0.0 && alpha.is_finite() && eta.is_finite() {
        Ok(())
    } else {
        Err(AnalysisError::InvalidArguments(format!("alpha and eta must be positive, got {alpha}, {eta}")))
    }
}

#[allow(clippy::too_many_arguments)]
fn report(
    h: &Matrix,
    s: Split,
    v_hat: Matrix,
    p_inv: Matrix,
    k: usize,
    l: usize,
    alpha: f64,
    eta: f64,
) -> Result<PreconditionerReport, AnalysisError> {
    let n = h.nrows();
    let symmetry_residual = max_abs(&(&p_inv - p_inv.transpose()));
    let p_inv_eigenvalues = jacobi_eigen(&p_inv)?.values;
    let min_p_inv_eigenvalue = p_inv_eigenvalues[n - 1];

    // P⁻¹H is similar to the symmetric H^{1/2} P⁻¹ H^{1/2}.
    let root = from_eigenpairs(&s.eig.vectors, &s.eig.values.map(f64::sqrt));
    let effective_eigenvalues = jacobi_eigen(&(&root * &p_inv * &root))?.values;
    let kappa_eff = effective_eigenvalues[0] / effective_eigenvalues[n - 1];

    let ph = &p_inv * h;
    let alpha_residual = v_hat
        .column_iter()
        .map(|v| (&ph * v - v * alpha).norm())
        .fold(0.0, f64::max);

    let lam = &s.eig.values;
    let complement = lam.select_rows(&s.rest);
    let cases = condition_number_cases(lam[0], lam[k], lam[n - l - 1], lam[n - 1], alpha, eta)?;
    Ok(PreconditionerReport {
        n,
        k,
        l,
        alpha,
        eta,
        p_inv,
        p_inv_eigenvalues,
        effective_eigenvalues,
        symmetry_residual,
        min_p_inv_eigenvalue,
        hessian_eigenvalues: lam.clone(),
        v_hat,
        complement,
        alpha_residual,
        kappa: cases.kappa,
        kappa_eff,
        cases,
    })
}

/// Inverse preconditioner with both learning rates set to one,
/// `V̂ diag(u) V̂ᵀ + (I − V̂V̂ᵀ) diag(q) (I − V̂V̂ᵀ)`, for a FOSI state.
pub fn normalized_inverse_preconditioner(spectrum: &SpectrumEstimate, q: &Vector) -> Matrix {
    diagonal_inverse_preconditioner(&spectrum.vectors, &spectrum.values, q, 1.0, 1.0)
}

/// Whether every eigenvalue of a (normalized) inverse preconditioner lies in
/// `[1/z, 1/eps]`, the bounded-preconditioner assumption of the stochastic
/// convergence analysis. Returns the extreme eigenvalues with the verdict.
pub fn preconditioner_within_bounds(p_inv: &Matrix, z: f64, eps: f64) -> Result<(bool, f64, f64), AnalysisError> {
    let values = jacobi_eigen(p_inv)?.values;
    let (hi, lo) = (values[0], values[values.len() - 1]);
    let tol = 1e-12 * hi.abs().max(1.0);
    Ok((lo >= 1.0 / z - tol && hi <= 1.0 / eps + tol, lo, hi))
}

/// Diagonal `q` of an Adam optimizer after `steps` full-gradient steps from
/// `theta0` with learning rate `lr`, evaluated at the reached point.
pub fn adam_preconditioner_after<P: Objective + ?Sized>(
    problem: &P,
    theta0: &Vector,
    lr: f64,
    steps: usize,
) -> Result<Vector, OptimError> {
    let mut opt = BaseOptimizer::adam(lr);
    let mut theta = theta0.clone();
    for _ in 0..steps {
        theta += opt.step(&problem.gradient(&theta))?;
    }
    opt.inverse_preconditioner_diag(&problem.gradient(&theta))
}

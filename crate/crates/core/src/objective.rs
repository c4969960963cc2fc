//! The problem abstraction consumed by every optimizer: value, gradient and
//! Hessian-vector product, plus deterministic minibatch selection for
//! finite-sum objectives.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::Vector;

/// A twice-differentiable objective `f: ℝⁿ → ℝ`.
///
/// Implementations are immutable after construction; all methods are pure
/// functions of their arguments.
pub trait Objective: Sync {
    fn dim(&self) -> usize;
    fn value(&self, theta: &Vector) -> f64;
    fn gradient(&self, theta: &Vector) -> Vector;
    /// `∇²f(θ)·v`.
    fn hvp(&self, theta: &Vector, v: &Vector) -> Vector;
}

/// A finite-sum objective `f(θ) = (1/N) Σᵢ F(θ, xᵢ)` that can also be
/// evaluated on a subset of its samples.
pub trait Stochastic: Objective {
    fn dataset_size(&self) -> usize;
    fn value_on(&self, theta: &Vector, batch: &[usize]) -> f64;
    fn gradient_on(&self, theta: &Vector, batch: &[usize]) -> Vector;
    fn hvp_on(&self, theta: &Vector, v: &Vector, batch: &[usize]) -> Vector;
}

/// A [`Stochastic`] objective with its batch fixed, so that it evaluates the
/// minibatch function `fⁱ` through the plain [`Objective`] interface.
pub struct BatchView<'a, P: ?Sized> {
    problem: &'a P,
    batch: &'a [usize],
}

impl<'a, P: Stochastic + ?Sized> BatchView<'a, P> {
    pub fn new(problem: &'a P, batch: &'a [usize]) -> Self {
        Self { problem, batch }
    }
}

impl<P: Stochastic + ?Sized> Objective for BatchView<'_, P> {
    fn dim(&self) -> usize {
        self.problem.dim()
    }
    fn value(&self, theta: &Vector) -> f64 {
        self.problem.value_on(theta, self.batch)
    }
    fn gradient(&self, theta: &Vector) -> Vector {
        self.problem.gradient_on(theta, self.batch)
    }
    fn hvp(&self, theta: &Vector, v: &Vector) -> Vector {
        self.problem.hvp_on(theta, v, self.batch)
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ObjectiveError {
    #[error("batch size {batch_size} is invalid for a dataset of {dataset_size} samples")]
    InvalidBatch { dataset_size: usize, batch_size: usize },
    #[error("derivative check needs at least one trial")]
    NoTrials,
    #[error("dimension mismatch: problem has n = {expected}, got a vector of length {got}")]
    Dimension { expected: usize, got: usize },
    #[error("non-finite {what} at theta = {theta:?}")]
    NonFinite { what: &'static str, theta: Vec<f64> },
}

/// Seeded sampler of minibatch index sets, uniform without replacement.
#[derive(Debug, Clone)]
pub struct BatchSchedule {
    dataset_size: usize,
    batch_size: usize,
    ese_batch_size: Option<usize>,
    rng: ChaCha8Rng,
}

impl BatchSchedule {
    pub fn new(
        dataset_size: usize,
        batch_size: usize,
        seed: u64,
        ese_batch_size: Option<usize>,
    ) -> Result<Self, ObjectiveError> {
        for size in std::iter::once(batch_size).chain(ese_batch_size) {
            if size == 0 || size > dataset_size {
                return Err(ObjectiveError::InvalidBatch { dataset_size, batch_size: size });
            }
        }
        Ok(Self {
            dataset_size,
            batch_size,
            ese_batch_size,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn dataset_size(&self) -> usize {
        self.dataset_size
    }

    pub fn batch_size(&self) -> usize {
        self.batch_size
    }

    pub fn ese_batch_size(&self) -> Option<usize> {
        self.ese_batch_size
    }

    /// Iterations needed to touch `dataset_size` samples once.
    pub fn iterations_per_epoch(&self) -> usize {
        self.dataset_size.div_ceil(self.batch_size)
    }

    pub fn next_batch(&mut self) -> Vec<usize> {
        self.draw(self.batch_size)
    }

    /// A dedicated (usually larger) batch for spectrum estimation, or `None`
    /// when no ESE batch size was configured.
    pub fn next_ese_batch(&mut self) -> Option<Vec<usize>> {
        self.ese_batch_size.map(|size| self.draw(size))
    }

    fn draw(&mut self, size: usize) -> Vec<usize> {
        rand::seq::index::sample(&mut self.rng, self.dataset_size, size).into_vec()
    }
}

/// Worst-case derivative discrepancies found by [`check_derivatives`].
#[derive(Debug, Clone, PartialEq)]
pub struct DiagnosticReport {
    /// `max |vᵀ∇f − central difference| / max(1, |f(θ)|)`.
    pub gradient_error: f64,
    /// Relative violation of `vᵀH w = wᵀH v`.
    pub symmetry_error: f64,
    /// Relative violation of `H(a v + b w) = a H v + b H w`.
    pub linearity_error: f64,
    pub trials: usize,
}

impl DiagnosticReport {
    pub fn passes(&self, gradient_tol: f64, hvp_tol: f64) -> bool {
        self.gradient_error <= gradient_tol
            && self.symmetry_error <= hvp_tol
            && self.linearity_error <= hvp_tol
    }
}

/// Central-difference step used by [`check_derivatives`].
pub const FD_STEP: f64 = 1e-5;

/// Compare the gradient against central finite differences of the value and
/// check HVP symmetry and linearity along `trials` random directions.
pub fn check_derivatives<P: Objective + ?Sized>(
    problem: &P,
    theta: &Vector,
    trials: usize,
    seed: u64,
) -> Result<DiagnosticReport, ObjectiveError> {
    if trials == 0 {
        return Err(ObjectiveError::NoTrials);
    }
    let n = problem.dim();
    if theta.len() != n {
        return Err(ObjectiveError::Dimension { expected: n, got: theta.len() });
    }
    let f0 = problem.value(theta);
    if !f0.is_finite() {
        return Err(ObjectiveError::NonFinite { what: "value", theta: theta.iter().copied().collect() });
    }
    let grad = problem.gradient(theta);
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(ObjectiveError::NonFinite { what: "gradient", theta: theta.iter().copied().collect() });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut normal = |len: usize| Vector::from_fn(len, |_, _| rng.sample::<f64, _>(StandardNormal));
    let mut report = DiagnosticReport { gradient_error: 0.0, symmetry_error: 0.0, linearity_error: 0.0, trials };
    let scale = f0.abs().max(1.0);
    for _ in 0..trials {
        let mut v = normal(n);
        v /= v.norm().max(f64::MIN_POSITIVE);
        let w = normal(n);
        let ab = normal(2);
        let (a, b) = (ab[0], ab[1]);

        let fd = (problem.value(&(theta + &v * FD_STEP)) - problem.value(&(theta - &v * FD_STEP)))
            / (2.0 * FD_STEP);
        report.gradient_error = report.gradient_error.max((v.dot(&grad) - fd).abs() / scale);

        let hv = problem.hvp(theta, &v);
        let hw = problem.hvp(theta, &w);
        let vhw = v.dot(&hw);
        let whv = w.dot(&hv);
        let sym_scale = v.norm() * hw.norm() + w.norm() * hv.norm();
        report.symmetry_error = report.symmetry_error.max(relative(vhw - whv, sym_scale));

        let combo = problem.hvp(theta, &(&v * a + &w * b));
        let expected = &hv * a + &hw * b;
        let lin_scale = (&hv * a).norm() + (&hw * b).norm();
        report.linearity_error = report.linearity_error.max(relative((combo - expected).norm(), lin_scale));
    }
    Ok(report)
}

fn relative(diff: f64, scale: f64) -> f64 {
    if scale > 0.0 {
        diff.abs() / scale
    } else {
        diff.abs()
    }
}

//! Benchmark problems with known ground truth.
//!
//! Quadratics `½θᵀHθ` are stored through their eigendecomposition, so the
//! exact spectrum is always available for comparison. The logistic task is
//! a finite sum with closed-form gradient and Hessian-vector product.

mod logistic;
mod quadratic;

pub use logistic::{LogisticProblem, SYNTHETIC_THETA_SCALE};
pub use quadratic::{
    gen_appendix_e_quadratic, gen_fbzeta_quadratic, gen_random_spd, gen_spectrum_quadratic, fbzeta_block_start,
    QuadraticProblem, DENSE_LIMIT,
};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ProblemError {
    #[error("invalid arguments: {0}")]
    InvalidArguments(String),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("line {line}: {msg}")]
    Csv { line: u64, msg: String },
    #[error("line {line}: label {value:?} is not 0 or 1")]
    Label { line: u64, value: String },
}

/// Seed streams, so that each random ingredient of a problem can be
/// regenerated independently of the others.
pub(crate) mod stream {
    pub const START: u64 = 1;
    pub const BASIS: u64 = 2;
    pub const FEATURES: u64 = 3;
    pub const TRUTH: u64 = 4;
    pub const LABELS: u64 = 5;
}

pub(crate) fn rng(seed: u64, stream: u64) -> rand_chacha::ChaCha8Rng {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

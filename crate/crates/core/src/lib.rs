//! Hybrid first/second-order optimization.
//!
//! The optimizer in [`fosi`] splits every update into two orthogonal parts:
//! a scaled Newton step on the span of a few extreme Hessian eigenvectors,
//! and an ordinary first-order step (GD, Heavy-Ball or Adam from [`optim`])
//! on the orthogonal complement. The eigenvectors come from a Lanczos-based
//! extreme-spectrum estimator in [`spectral`], driven only by Hessian-vector
//! products supplied through the [`objective::Objective`] trait.
//!
//! [`analysis`] builds the optimizer's implicit preconditioner densely for
//! small quadratics and checks its spectral properties, and [`problems`]
//! provides the benchmark quadratics and a logistic-regression task.

pub mod analysis;
pub mod fosi;
pub mod linalg;
pub mod objective;
pub mod optim;
pub mod problems;
pub mod spectral;
pub mod trace;

pub use fosi::{Fosi, FosiConfig, RefreshInterval, StoppingRule};
pub use objective::{BatchSchedule, Objective, Stochastic};
pub use optim::{BaseOptimizer, OptimalLrForm};
pub use spectral::SpectrumEstimate;
pub use trace::{RunOutcome, RunStatus, RunTrace, TraceRow};

/// Dense column vector used throughout the crate.
pub type Vector = nalgebra::DVector<f64>;
/// Dense column-major matrix used throughout the crate.
pub type Matrix = nalgebra::DMatrix<f64>;

//! Experiment harness for the `fosi` crate: TOML experiment files, parallel
//! runs, trace and summary CSVs, learning-rate sweeps, SVG learning curves,
//! derivative checks and dense lemma verification.

pub mod config;
pub mod experiment;
pub mod plot;

use std::path::Path;

use fosi::analysis::{
    adam_preconditioner_after, condition_number_cases, effective_preconditioner_diagonal,
    effective_preconditioner_identity, identity_inverse_preconditioner_eigenform, AnalysisError,
};
use fosi::linalg::max_abs;
use fosi::objective::{check_derivatives, DiagnosticReport, ObjectiveError};
use fosi::problems::{gen_appendix_e_quadratic, gen_random_spd, ProblemError};
use fosi::Vector;
use serde::Deserialize;
use thiserror::Error;

pub use config::{ExperimentSpec, Problem, ProblemSpec};
pub use experiment::{run_experiment, sweep_learning_rates};
pub use plot::emit_plot;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("config: {0}")]
    Config(String),
    #[error("empty sweep")]
    EmptySweep,
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("plot: {0}")]
    Plot(String),
    #[error(transparent)]
    Trace(#[from] fosi::trace::TraceError),
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
    #[error(transparent)]
    Fosi(#[from] fosi::fosi::FosiError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error(transparent)]
    Optim(#[from] fosi::optim::OptimError),
}

impl BenchError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io { path: path.display().to_string(), source }
    }
}

/// Finite-difference gradient tolerance, relative to `max(1, |f|)`.
pub const GRADIENT_TOL: f64 = 1e-5;
/// Relative tolerance on HVP symmetry and linearity.
pub const HVP_TOL: f64 = 1e-10;

/// A `[problem]` section plus check settings; other keys are ignored, so an
/// experiment file works as well.
#[derive(Debug, Deserialize)]
pub struct CheckSpec {
    pub problem: ProblemSpec,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_trials() -> usize {
    10
}

/// Derivative diagnostics at the start point and at a perturbed point.
pub fn check_problem(spec: &CheckSpec) -> Result<Vec<(String, DiagnosticReport)>, BenchError> {
    let problem = Problem::build(&spec.problem)?;
    let obj = problem.objective();
    let theta0 = problem.theta0();
    let shift = Vector::from_fn(obj.dim(), |i, _| ((i as f64 + 1.0) * 0.7).sin() * 0.5);
    let mut out = Vec::new();
    for (label, theta) in [("theta0", theta0.clone()), ("theta0+shift", theta0 + shift)] {
        out.push((label.to_string(), check_derivatives(obj, &theta, spec.trials, spec.seed)?));
    }
    Ok(out)
}

/// Outcome of one lemma check.
#[derive(Debug, Clone, PartialEq)]
pub struct LemmaCheck {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

/// Dense checks of the preconditioner claims on a random SPD matrix of size
/// `n` (with `k = 5`, `ℓ = 3`) and of the counter-example condition numbers.
pub fn verify_lemmas(n: usize, seed: u64) -> Result<Vec<LemmaCheck>, BenchError> {
    let (k, l, alpha, eta) = (5, 3, 1.0, 0.01);
    if n <= k + l {
        return Err(BenchError::Config(format!("verify-lemmas needs n > {}", k + l)));
    }
    let q = gen_random_spd(n, seed)?;
    let h = q.dense_hessian();
    let mut checks = Vec::new();

    let id = effective_preconditioner_identity(&h, k, l, alpha, eta)?;
    let err = id.identity_spectrum_error();
    checks.push(LemmaCheck {
        name: "identity: spectrum of P^-1 H is {alpha} U eta*lambda",
        passed: err <= 1e-8,
        detail: format!("max error {err:.3e}"),
    });
    let eigenform = identity_inverse_preconditioner_eigenform(&h, k, l, alpha, eta)?;
    let gap = max_abs(&(eigenform - &id.p_inv));
    checks.push(LemmaCheck {
        name: "identity: projection form equals eigenbasis form",
        passed: gap <= 1e-10,
        detail: format!("max gap {gap:.3e}"),
    });

    let qd = adam_preconditioner_after(&q, q.theta0(), 0.05, 10)?;
    let diag = effective_preconditioner_diagonal(&h, &qd, k, l, alpha, eta)?;
    checks.push(LemmaCheck {
        name: "diagonal: P^-1 symmetric positive definite",
        passed: diag.symmetry_residual <= 1e-10 && diag.min_p_inv_eigenvalue > 0.0,
        detail: format!("residual {:.3e}, min eigenvalue {:.3e}", diag.symmetry_residual, diag.min_p_inv_eigenvalue),
    });
    checks.push(LemmaCheck {
        name: "diagonal: V-hat columns are alpha-eigenvectors of P^-1 H",
        passed: diag.alpha_residual <= 1e-8,
        detail: format!("max residual {:.3e}", diag.alpha_residual),
    });

    let e = gen_appendix_e_quadratic(seed)?;
    let lam = e.eigenvalues();
    let c = condition_number_cases(lam[0], lam[9], lam[99], lam[99], 1.0, 0.001)?;
    checks.push(LemmaCheck {
        name: "counter-example: kappa_eff exceeds kappa",
        passed: c.case == 3 && !c.improved && (c.kappa - 1000.0).abs() < 1e-9 && (c.kappa_eff - 1e5).abs() < 1e-6,
        detail: format!("case {}, kappa {:.6e}, kappa_eff {:.6e}", c.case, c.kappa, c.kappa_eff),
    });
    Ok(checks)
}

//! Per-iteration run records and their CSV form.
//!
//! Floats are written with 17 significant digits so that a trace read back
//! from disk reproduces the in-memory values bit for bit.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::Vector;

pub const TRACE_HEADER: [&str; 6] = ["iteration", "f_value", "grad_norm", "lr_effective", "ese_call", "elapsed_seconds"];

/// One row per iteration `t`: the objective and gradient norm at `θ_t`, the
/// learning rate of the base branch used for the update from `θ_t`, and
/// whether a spectrum refresh ran at the top of that iteration. The last row
/// of a completed run is terminal and carries no update.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub f_value: f64,
    pub grad_norm: f64,
    pub lr_effective: f64,
    pub ese_call: bool,
    pub elapsed_seconds: f64,
}

impl TraceRow {
    /// Equality on everything except wall-clock time.
    pub fn same_numbers(&self, other: &Self) -> bool {
        self.iteration == other.iteration
            && self.f_value.to_bits() == other.f_value.to_bits()
            && self.grad_norm.to_bits() == other.grad_norm.to_bits()
            && self.lr_effective.to_bits() == other.lr_effective.to_bits()
            && self.ese_call == other.ese_call
    }
}

/// Outcome of the learning-rate rescaling done at one spectrum refresh.
#[derive(Debug, Clone, PartialEq)]
pub struct EseEvent {
    pub iteration: usize,
    pub values: Vector,
    pub lr_scaled: f64,
    /// `λ_n` (and `λ_{n−ℓ}`) were taken from the bottom Ritz value because
    /// `ℓ = 0`.
    pub used_ritz_floor: bool,
    /// Scaling was skipped because a needed eigenvalue estimate was not
    /// positive.
    pub fallback: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunTrace {
    pub rows: Vec<TraceRow>,
    pub ese_events: Vec<EseEvent>,
}

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("trace csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("trace csv has unexpected header {0:?}")]
    Header(Vec<String>),
    #[error("trace has no rows")]
    Empty,
}

impl RunTrace {
    pub fn final_value(&self) -> Option<f64> {
        self.rows.last().map(|r| r.f_value)
    }

    /// First iteration with `f ≤ threshold`.
    pub fn iterations_to(&self, threshold: f64) -> Option<usize> {
        self.rows.iter().find(|r| r.f_value <= threshold).map(|r| r.iteration)
    }

    pub fn min_value(&self) -> Option<f64> {
        self.rows.iter().map(|r| r.f_value).filter(|f| !f.is_nan()).reduce(f64::min)
    }

    /// Rows compare equal apart from elapsed time.
    pub fn same_numbers(&self, other: &Self) -> bool {
        self.rows.len() == other.rows.len() && self.rows.iter().zip(&other.rows).all(|(a, b)| a.same_numbers(b))
    }

    /// Write every `stride`-th row plus the last one. With `timing = false`
    /// the elapsed column is written as zero so that output is reproducible
    /// byte for byte.
    pub fn write_csv<W: Write>(&self, out: W, stride: usize, timing: bool) -> Result<(), TraceError> {
        let stride = stride.max(1);
        let mut w = csv::Writer::from_writer(out);
        w.write_record(TRACE_HEADER)?;
        let last = self.rows.len().saturating_sub(1);
        for (i, r) in self.rows.iter().enumerate() {
            if i % stride != 0 && i != last {
                continue;
            }
            let elapsed = if timing { r.elapsed_seconds } else { 0.0 };
            w.write_record(&[
                r.iteration.to_string(),
                fmt_f64(r.f_value),
                fmt_f64(r.grad_norm),
                fmt_f64(r.lr_effective),
                u8::from(r.ese_call).to_string(),
                fmt_f64(elapsed),
            ])?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self, TraceError> {
        let mut r = csv::Reader::from_reader(input);
        let header: Vec<String> = r.headers()?.iter().map(str::to_owned).collect();
        if header != TRACE_HEADER {
            return Err(TraceError::Header(header));
        }
        let mut rows = Vec::new();
        for rec in r.deserialize::<CsvRow>() {
            let rec = rec?;
            rows.push(TraceRow {
                iteration: rec.iteration,
                f_value: rec.f_value,
                grad_norm: rec.grad_norm,
                lr_effective: rec.lr_effective,
                ese_call: rec.ese_call != 0,
                elapsed_seconds: rec.elapsed_seconds,
            });
        }
        if rows.is_empty() {
            return Err(TraceError::Empty);
        }
        Ok(Self { rows, ese_events: Vec::new() })
    }
}

#[derive(Deserialize)]
struct CsvRow {
    iteration: usize,
    f_value: f64,
    grad_norm: f64,
    lr_effective: f64,
    ese_call: u8,
    elapsed_seconds: f64,
}

/// 17 significant digits, scientific notation; `inf`/`NaN` spelled the way
/// Rust parses them back.
pub fn fmt_f64(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        x.to_string()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum RunStatus {
    /// Iteration budget exhausted.
    Completed,
    /// Gradient-norm threshold reached.
    Converged,
    /// Objective became non-finite or grew past the divergence guard.
    Diverged,
    /// The run aborted (for example a spectrum estimate failed).
    Failed(String),
}

impl RunStatus {
    pub fn label(&self) -> &str {
        match self {
            Self::Completed => "completed",
            Self::Converged => "converged",
            Self::Diverged => "diverged",
            Self::Failed(_) => "failed",
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub trace: RunTrace,
    pub status: RunStatus,
    pub theta: Vector,
}

//! The FOSI meta-optimizer.
//!
//! Every `T` iterations after a warmup of `W` iterations, the `k` largest and
//! `ℓ` smallest Hessian eigenpairs are re-estimated. Each update then splits
//! the gradient into its projection on the estimated eigenvectors `V̂` and the
//! orthogonal remainder:
//!
//! ```text
//! g₁ = V̂(V̂ᵀg)          g₂ = g − V̂(V̂ᵀg)
//! d₁ = −α V̂((V̂ᵀḡ₁) ⊙ u)              scaled Newton step on span(V̂)
//! d_b = BaseOptStep(g₂)               base optimizer on the remainder
//! d₂ = d_b − V̂(V̂ᵀd_b)
//! θ ← θ + d₁ + d₂
//! ```
//!
//! where `u = 1/|λ̂|` and `ḡ₁` is the projection of a full-space momentum
//! buffer that applies the base optimizer's own momentum rule to `g`. Keeping
//! that buffer in parameter space makes `ḡ = ḡ₁ + ḡ₂` hold for any `V̂`,
//! including across refreshes.
//!
//! When the base optimizer has a closed-form optimal learning rate, the
//! learning rate of the base branch is rescaled after each refresh by the
//! ratio of the optimal rates for the complement subspace and for the full
//! problem, clipped at `c`.

use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::objective::{BatchSchedule, BatchView, Objective, Stochastic};
use crate::optim::{BaseOptimizer, Momentum, OptimError, OptimalLrForm};
use crate::spectral::{ese, heuristic_m, SpectralError, SpectrumEstimate};
use crate::trace::{EseEvent, RunOutcome, RunStatus, RunTrace, TraceRow};
use crate::Vector;

/// A run is declared diverged once `f` exceeds this multiple of `f(θ₀)`.
pub const DIVERGENCE_FACTOR: f64 = 1e6;

#[derive(Debug, Error, PartialEq)]
pub enum FosiError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
    #[error("base optimizer: {0}")]
    Optim(#[from] OptimError),
    #[error("non-finite values in the {0} branch of the update")]
    NonFinite(Branch),
    #[error("vector has length {got}, problem dimension is {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("overhead target unattainable: rho * tau1 = {budget} does not exceed tau2 = {tau2}")]
    OverheadUnattainable { budget: f64, tau2: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    Newton,
    Base,
}

impl std::fmt::Display for Branch {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Newton => "Newton",
            Self::Base => "base",
        })
    }
}

/// Iterations between spectrum refreshes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RefreshInterval {
    Fixed(usize),
    /// Derived from a target runtime overhead factor `ρ > 1`.
    Auto { rho: f64 },
}

/// Iterations before the first refresh.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "WarmupRepr", into = "WarmupRepr")]
pub enum Warmup {
    Iterations(usize),
    /// Same as the resolved refresh interval.
    Interval,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum WarmupRepr {
    Count(usize),
    Word(String),
}

impl TryFrom<WarmupRepr> for Warmup {
    type Error = String;
    fn try_from(r: WarmupRepr) -> Result<Self, String> {
        match r {
            WarmupRepr::Count(n) => Ok(Self::Iterations(n)),
            WarmupRepr::Word(w) if w == "interval" => Ok(Self::Interval),
            WarmupRepr::Word(w) => Err(format!("warmup must be an iteration count or \"interval\", got {w:?}")),
        }
    }
}

impl From<Warmup> for WarmupRepr {
    fn from(w: Warmup) -> Self {
        match w {
            Warmup::Iterations(n) => Self::Count(n),
            Warmup::Interval => Self::Word("interval".into()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FosiConfig {
    /// Number of largest eigenpairs handled by the Newton branch.
    pub k: usize,
    /// Number of smallest eigenpairs handled by the Newton branch.
    #[serde(default)]
    pub l: usize,
    /// Newton-branch learning rate in `(0, 1]`.
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_interval")]
    pub interval: RefreshInterval,
    #[serde(default = "default_warmup")]
    pub warmup: Warmup,
    /// Clip on the learning-rate scaling factor: 1 disables scaling, `inf`
    /// leaves it unclipped.
    #[serde(default = "default_clip")]
    pub clip: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_alpha() -> f64 {
    1.0
}
fn default_interval() -> RefreshInterval {
    RefreshInterval::Auto { rho: 1.1 }
}
fn default_warmup() -> Warmup {
    Warmup::Iterations(0)
}
fn default_clip() -> f64 {
    f64::INFINITY
}

impl FosiConfig {
    /// `α = 1`, `T` for a 10% overhead, no warmup, unclipped scaling.
    pub fn new(k: usize, l: usize) -> Self {
        Self {
            k,
            l,
            alpha: default_alpha(),
            interval: default_interval(),
            warmup: default_warmup(),
            clip: default_clip(),
            seed: 0,
        }
    }

    /// Defaults for stochastic training: `α = 0.01`, clip 3, `W = T`.
    pub fn stochastic(k: usize, l: usize) -> Self {
        Self { alpha: 0.01, clip: 3.0, warmup: Warmup::Interval, ..Self::new(k, l) }
    }

    /// Check the configuration against a problem dimension and return the
    /// resolved `(T, W)`.
    pub fn resolve(&self, n: usize) -> Result<(usize, usize), FosiError> {
        if self.k + self.l == 0 {
            return Err(FosiError::InvalidConfig("k + l must be at least 1".into()));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(FosiError::InvalidConfig(format!("alpha must lie in (0, 1], got {}", self.alpha)));
        }
        if !(self.clip >= 1.0) {
            return Err(FosiError::InvalidConfig(format!("clip must be >= 1, got {}", self.clip)));
        }
        let m = heuristic_m(n, self.k, self.l)?;
        let interval = match self.interval {
            RefreshInterval::Fixed(0) => return Err(FosiError::InvalidConfig("refresh interval must be >= 1".into())),
            RefreshInterval::Fixed(t) => t,
            RefreshInterval::Auto { rho } => interval_from_overhead(m, rho)?,
        };
        let warmup = match self.warmup {
            Warmup::Iterations(w) => w,
            Warmup::Interval => interval,
        };
        Ok((interval, warmup))
    }
}

/// `⌈2m / (ρ − 1)⌉`: refresh interval keeping runtime within `ρ` times the
/// base optimizer's, assuming one HVP costs two gradients.
pub fn interval_from_overhead(m: usize, rho: f64) -> Result<usize, FosiError> {
    if !(rho > 1.0) || !rho.is_finite() {
        return Err(FosiError::InvalidConfig(format!("overhead factor rho must be > 1, got {rho}")));
    }
    Ok(ceil_tolerant(2.0 * m as f64 / (rho - 1.0)).max(1))
}

/// `⌈τ₃ / (ρτ₁ − τ₂)⌉` from measured latencies: `τ₁` per base iteration,
/// `τ₂` per FOSI iteration without refresh, `τ₃` per refresh. At least 1.
pub fn interval_from_timings(tau1: f64, tau2: f64, tau3: f64, rho: f64) -> Result<usize, FosiError> {
    if !(tau1 > 0.0 && tau2 > 0.0 && tau3 >= 0.0 && rho > 1.0) {
        return Err(FosiError::InvalidConfig(format!(
            "timings must be positive and rho > 1 (tau1 = {tau1}, tau2 = {tau2}, tau3 = {tau3}, rho = {rho})"
        )));
    }
    let budget = rho * tau1;
    if budget <= tau2 {
        return Err(FosiError::OverheadUnattainable { budget, tau2 });
    }
    Ok(ceil_tolerant(tau3 / (budget - tau2)).max(1))
}

/// Ceiling that ignores representation error, so 799.9999999999999 → 800.
fn ceil_tolerant(x: f64) -> usize {
    let r = x.round();
    if (x - r).abs() <= 1e-9 * x.abs().max(1.0) {
        r as usize
    } else {
        x.ceil() as usize
    }
}

/// Eigenvalue estimates entering the learning-rate scaling: the extremes of
/// the whole spectrum and of the complement handled by the base optimizer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralBounds {
    pub lambda_max: f64,
    /// `λ_{k+1}`, the top of the complement.
    pub head_next: f64,
    /// `λ_{n−ℓ}`, the bottom of the complement.
    pub tail_prev: f64,
    pub lambda_min: f64,
}

impl SpectralBounds {
    /// Proxies from an estimate: `λ̂₁` for `λ₁` and the last of the top block
    /// for `λ_{k+1}`; the first of the bottom block for `λ_{n−ℓ}` and its
    /// last entry for `λ_n`. With `ℓ = 0` both bottom values come from the
    /// smallest Ritz value, flagged by the returned boolean.
    pub fn from_estimate(est: &SpectrumEstimate) -> (Self, bool) {
        let (lambda_max, head_next) = if est.k > 0 {
            (est.values[0], est.values[est.k - 1])
        } else {
            (est.ritz_max, est.ritz_max)
        };
        if est.l > 0 {
            let bounds = Self {
                lambda_max,
                head_next,
                tail_prev: est.values[est.k],
                lambda_min: est.values[est.k + est.l - 1],
            };
            (bounds, false)
        } else {
            (Self { lambda_max, head_next, tail_prev: est.ritz_min, lambda_min: est.ritz_min }, true)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaledLr {
    pub lr: f64,
    /// Unclipped `η*₂ / η*` when it could be computed.
    pub ratio: Option<f64>,
    /// A required eigenvalue estimate was not positive, so no scaling.
    pub fallback: bool,
}

/// `η₂ = η · min(η*₂ / η*, c)`, never below `η`.
pub fn scale_learning_rate(lr: f64, form: OptimalLrForm, bounds: &SpectralBounds, clip: f64) -> ScaledLr {
    if form == OptimalLrForm::None || clip <= 1.0 {
        return ScaledLr { lr, ratio: None, fallback: false };
    }
    let full = form.evaluate(bounds.lambda_max, bounds.lambda_min);
    let complement = form.evaluate(bounds.head_next, bounds.tail_prev);
    match (full, complement) {
        (Some(full), Some(complement)) => {
            let ratio = complement / full;
            ScaledLr { lr: lr * ratio.max(1.0).min(clip), ratio: Some(ratio), fallback: false }
        }
        _ => ScaledLr { lr, ratio: None, fallback: true },
    }
}

/// When to stop an optimization run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StoppingRule {
    pub max_iters: usize,
    #[serde(default)]
    pub grad_tol: Option<f64>,
}

impl StoppingRule {
    pub fn iterations(max_iters: usize) -> Self {
        Self { max_iters, grad_tol: None }
    }

    fn converged(&self, grad_norm: f64) -> bool {
        self.grad_tol.is_some_and(|tol| grad_norm <= tol)
    }
}

/// Intermediate vectors of one update, exposed for verification.
#[derive(Debug, Clone)]
pub struct UpdateParts {
    pub g1: Vector,
    pub g2: Vector,
    /// Momentum-combined gradient of the Newton branch, before projection.
    pub g_bar: Vector,
    pub d1: Vector,
    pub d_base: Vector,
    pub d2: Vector,
    pub theta: Vector,
}

/// FOSI configuration plus evolving state.
#[derive(Debug, Clone)]
pub struct Fosi {
    cfg: FosiConfig,
    interval: usize,
    warmup: usize,
    n: usize,
    base: BaseOptimizer,
    spectrum: Option<SpectrumEstimate>,
    newton_buffer: Option<Vector>,
    newton_steps: i32,
    lr_scaled: f64,
    ese_calls: u64,
}

impl Fosi {
    pub fn new(cfg: FosiConfig, base: BaseOptimizer, n: usize) -> Result<Self, FosiError> {
        let (interval, warmup) = cfg.resolve(n)?;
        let lr_scaled = base.lr();
        Ok(Self {
            cfg,
            interval,
            warmup,
            n,
            base,
            spectrum: None,
            newton_buffer: None,
            newton_steps: 0,
            lr_scaled,
            ese_calls: 0,
        })
    }

    pub fn config(&self) -> &FosiConfig {
        &self.cfg
    }

    pub fn interval(&self) -> usize {
        self.interval
    }

    pub fn warmup(&self) -> usize {
        self.warmup
    }

    pub fn base(&self) -> &BaseOptimizer {
        &self.base
    }

    pub fn spectrum(&self) -> Option<&SpectrumEstimate> {
        self.spectrum.as_ref()
    }

    /// Learning rate currently used by the base branch.
    pub fn lr_effective(&self) -> f64 {
        self.lr_scaled
    }

    /// `t ≥ W` and `(t − W) mod T = 0`.
    pub fn should_refresh(&self, t: usize) -> bool {
        t >= self.warmup && (t - self.warmup).is_multiple_of(self.interval)
    }

    /// Install a spectrum estimate and rescale the base learning rate.
    pub fn set_spectrum(&mut self, est: SpectrumEstimate) -> Result<(ScaledLr, bool), FosiError> {
        if est.dim() != self.n {
            return Err(FosiError::Dimension { expected: self.n, got: est.dim() });
        }
        let (bounds, used_floor) = SpectralBounds::from_estimate(&est);
        let scaled = scale_learning_rate(self.base.lr(), self.base.optimal_lr_form(), &bounds, self.cfg.clip);
        self.lr_scaled = scaled.lr;
        self.spectrum = Some(est);
        Ok((scaled, used_floor))
    }

    /// Run the spectrum estimator on `problem` at `theta` and install it.
    pub fn refresh<P: Objective + ?Sized>(
        &mut self,
        problem: &P,
        theta: &Vector,
        iteration: usize,
    ) -> Result<EseEvent, FosiError> {
        let seed = self.cfg.seed.wrapping_add(self.ese_calls);
        self.ese_calls += 1;
        let est = ese(problem, theta, self.cfg.k, self.cfg.l, seed)?;
        let values = est.values.clone();
        let (scaled, used_ritz_floor) = self.set_spectrum(est)?;
        Ok(EseEvent {
            iteration,
            values,
            lr_scaled: scaled.lr,
            used_ritz_floor: used_ritz_floor && scaled.ratio.is_some(),
            fallback: scaled.fallback,
        })
    }

    /// One update from `theta` with gradient `g`.
    pub fn update_step(&mut self, theta: &Vector, g: &Vector) -> Result<Vector, FosiError> {
        self.update_parts(theta, g).map(|p| p.theta)
    }

    /// One update, returning every intermediate vector.
    pub fn update_parts(&mut self, theta: &Vector, g: &Vector) -> Result<UpdateParts, FosiError> {
        for x in [theta, g] {
            if x.len() != self.n {
                return Err(FosiError::Dimension { expected: self.n, got: x.len() });
            }
        }
        let g_bar = self.advance_newton_momentum(g);

        let Some(spec) = &self.spectrum else {
            let d_base = self.base.step_with_lr(g, self.lr_scaled)?;
            if d_base.iter().any(|x| !x.is_finite()) {
                return Err(FosiError::NonFinite(Branch::Base));
            }
            let theta = theta + &d_base;
            let zeros = Vector::zeros(self.n);
            return Ok(UpdateParts { g1: zeros.clone(), g2: g.clone(), g_bar, d1: zeros, d2: d_base.clone(), d_base, theta });
        };

        let v = &spec.vectors;
        let g1 = v * v.tr_mul(g);
        let g2 = g - &g1;
        let g_bar1 = v * v.tr_mul(&g_bar);
        let d1 = -(v * v.tr_mul(&g_bar1).component_mul(&spec.inv_abs)) * self.cfg.alpha;
        if d1.iter().any(|x| !x.is_finite()) {
            return Err(FosiError::NonFinite(Branch::Newton));
        }
        let d_base = self.base.step_with_lr(&g2, self.lr_scaled)?;
        let d2 = &d_base - v * v.tr_mul(&d_base);
        if d2.iter().any(|x| !x.is_finite()) {
            return Err(FosiError::NonFinite(Branch::Base));
        }
        let theta = theta + &d1 + &d2;
        Ok(UpdateParts { g1, g2, g_bar, d1, d_base, d2, theta })
    }

    fn advance_newton_momentum(&mut self, g: &Vector) -> Vector {
        match self.base.momentum() {
            Momentum::None => g.clone(),
            Momentum::Buffer { beta } => {
                let buf = match self.newton_buffer.take() {
                    Some(b) => b * beta + g,
                    None => g.clone(),
                };
                self.newton_buffer = Some(buf.clone());
                buf
            }
            Momentum::Ema { beta } => {
                let m = match self.newton_buffer.take() {
                    Some(m) => m * beta + g * (1.0 - beta),
                    None => g * (1.0 - beta),
                };
                self.newton_steps += 1;
                let corrected = &m / (1.0 - beta.powi(self.newton_steps));
                self.newton_buffer = Some(m);
                corrected
            }
        }
    }
}

struct Recorder {
    start: Instant,
    f0: Option<f64>,
    trace: RunTrace,
}

impl Recorder {
    fn new() -> Self {
        Self { start: Instant::now(), f0: None, trace: RunTrace::default() }
    }

    fn diverged(&mut self, f: f64) -> bool {
        let f0 = *self.f0.get_or_insert(f);
        !f.is_finite() || (f0 != 0.0 && f > DIVERGENCE_FACTOR * f0.abs())
    }

    fn push(&mut self, iteration: usize, f_value: f64, grad_norm: f64, lr_effective: f64, ese_call: bool) {
        self.trace.rows.push(TraceRow {
            iteration,
            f_value,
            grad_norm,
            lr_effective,
            ese_call,
            elapsed_seconds: self.start.elapsed().as_secs_f64(),
        });
    }

    fn finish(self, status: RunStatus, theta: Vector) -> RunOutcome {
        RunOutcome { trace: self.trace, status, theta }
    }
}

fn check_start(n: usize, theta0: &Vector) -> Result<(), FosiError> {
    if theta0.len() == n {
        Ok(())
    } else {
        Err(FosiError::Dimension { expected: n, got: theta0.len() })
    }
}

/// Checks shared by every loop at the top of iteration `t`; `Some` ends the
/// run after recording a final row.
fn stop_reason(rec: &mut Recorder, stop: &StoppingRule, t: usize, f: f64, grad_norm: f64) -> Option<RunStatus> {
    if rec.diverged(f) {
        Some(RunStatus::Diverged)
    } else if stop.converged(grad_norm) {
        Some(RunStatus::Converged)
    } else if t >= stop.max_iters {
        Some(RunStatus::Completed)
    } else {
        None
    }
}

/// Minimize a deterministic objective with FOSI.
pub fn optimize<P: Objective + ?Sized>(
    problem: &P,
    theta0: &Vector,
    cfg: &FosiConfig,
    base: BaseOptimizer,
    stop: &StoppingRule,
) -> Result<RunOutcome, FosiError> {
    check_start(problem.dim(), theta0)?;
    let mut fosi = Fosi::new(cfg.clone(), base, problem.dim())?;
    let mut rec = Recorder::new();
    let mut theta = theta0.clone();
    let mut t = 0;
    let status = loop {
        let f = problem.value(&theta);
        let g = problem.gradient(&theta);
        let gn = g.norm();
        if let Some(status) = stop_reason(&mut rec, stop, t, f, gn) {
            rec.push(t, f, gn, fosi.lr_effective(), false);
            break status;
        }
        let mut ese_call = false;
        if fosi.should_refresh(t) {
            match fosi.refresh(problem, &theta, t) {
                Ok(event) => {
                    rec.trace.ese_events.push(event);
                    ese_call = true;
                }
                Err(e) => {
                    rec.push(t, f, gn, fosi.lr_effective(), false);
                    break RunStatus::Failed(e.to_string());
                }
            }
        }
        rec.push(t, f, gn, fosi.lr_effective(), ese_call);
        match fosi.update_step(&theta, &g) {
            Ok(next) => theta = next,
            Err(e) => break RunStatus::Failed(e.to_string()),
        }
        t += 1;
    };
    Ok(rec.finish(status, theta))
}

/// Minimize a finite-sum objective with FOSI. A batch is drawn at the top of
/// every iteration; spectrum refreshes use the current batch, or a dedicated
/// one when the schedule has an ESE batch size. Recorded values are on the
/// full dataset.
pub fn optimize_stochastic<P: Stochastic + ?Sized>(
    problem: &P,
    theta0: &Vector,
    cfg: &FosiConfig,
    base: BaseOptimizer,
    stop: &StoppingRule,
    schedule: &mut BatchSchedule,
) -> Result<RunOutcome, FosiError> {
    check_start(problem.dim(), theta0)?;
    let mut fosi = Fosi::new(cfg.clone(), base, problem.dim())?;
    let mut rec = Recorder::new();
    let mut theta = theta0.clone();
    let mut t = 0;
    let status = loop {
        let f = problem.value(&theta);
        let gn = problem.gradient(&theta).norm();
        if let Some(status) = stop_reason(&mut rec, stop, t, f, gn) {
            rec.push(t, f, gn, fosi.lr_effective(), false);
            break status;
        }
        let batch = schedule.next_batch();
        let view = BatchView::new(problem, &batch);
        let mut ese_call = false;
        if fosi.should_refresh(t) {
            let refreshed = match schedule.next_ese_batch() {
                Some(ese_batch) => fosi.refresh(&BatchView::new(problem, &ese_batch), &theta, t),
                None => fosi.refresh(&view, &theta, t),
            };
            match refreshed {
                Ok(event) => {
                    rec.trace.ese_events.push(event);
                    ese_call = true;
                }
                Err(e) => {
                    rec.push(t, f, gn, fosi.lr_effective(), false);
                    break RunStatus::Failed(e.to_string());
                }
            }
        }
        rec.push(t, f, gn, fosi.lr_effective(), ese_call);
        let g = view.gradient(&theta);
        match fosi.update_step(&theta, &g) {
            Ok(next) => theta = next,
            Err(e) => break RunStatus::Failed(e.to_string()),
        }
        t += 1;
    };
    Ok(rec.finish(status, theta))
}

/// Minimize a deterministic objective with the base optimizer alone.
pub fn run_base<P: Objective + ?Sized>(
    problem: &P,
    theta0: &Vector,
    mut base: BaseOptimizer,
    stop: &StoppingRule,
) -> Result<RunOutcome, FosiError> {
    check_start(problem.dim(), theta0)?;
    let mut rec = Recorder::new();
    let mut theta = theta0.clone();
    let mut t = 0;
    let status = loop {
        let f = problem.value(&theta);
        let g = problem.gradient(&theta);
        let gn = g.norm();
        let stop_now = stop_reason(&mut rec, stop, t, f, gn);
        rec.push(t, f, gn, base.lr(), false);
        if let Some(status) = stop_now {
            break status;
        }
        match base.step(&g) {
            Ok(d) => theta += d,
            Err(e) => break RunStatus::Failed(e.to_string()),
        }
        t += 1;
    };
    Ok(rec.finish(status, theta))
}

/// Minimize a finite-sum objective with the base optimizer alone, drawing
/// batches exactly as [`optimize_stochastic`] does.
pub fn run_base_stochastic<P: Stochastic + ?Sized>(
    problem: &P,
    theta0: &Vector,
    mut base: BaseOptimizer,
    stop: &StoppingRule,
    schedule: &mut BatchSchedule,
) -> Result<RunOutcome, FosiError> {
    check_start(problem.dim(), theta0)?;
    let mut rec = Recorder::new();
    let mut theta = theta0.clone();
    let mut t = 0;
    let status = loop {
        let f = problem.value(&theta);
        let gn = problem.gradient(&theta).norm();
        let stop_now = stop_reason(&mut rec, stop, t, f, gn);
        rec.push(t, f, gn, base.lr(), false);
        if let Some(status) = stop_now {
            break status;
        }
        let batch = schedule.next_batch();
        let g = problem.gradient_on(&theta, &batch);
        match base.step(&g) {
            Ok(d) => theta += d,
            Err(e) => break RunStatus::Failed(e.to_string()),
        }
        t += 1;
    };
    Ok(rec.finish(status, theta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Matrix;

    fn v(xs: &[f64]) -> Vector {
        Vector::from_column_slice(xs)
    }

    /// H = [[2.5, 1.5], [1.5, 2.5]]: eigenvalues 4 and 1.
    fn two_by_two_spectrum() -> SpectrumEstimate {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        SpectrumEstimate::from_eigenpairs(v(&[4.0]), Matrix::from_column_slice(2, 1, &[s, s]), 1, 0, 1.0, 4.0)
    }

    fn fixed(k: usize, l: usize) -> FosiConfig {
        FosiConfig { interval: RefreshInterval::Fixed(10), ..FosiConfig::new(k, l) }
    }

    #[test]
    fn empty_spectrum_reduces_to_gd() {
        let mut f = Fosi::new(fixed(1, 0), BaseOptimizer::gd(0.1), 2).unwrap();
        let next = f.update_step(&v(&[1.0, 1.0]), &v(&[2.0, 0.0])).unwrap();
        assert_eq!(next, v(&[0.8, 1.0]));
    }

    #[test]
    fn hand_computed_two_by_two_step() {
        let eta = 0.1;
        let cfg = FosiConfig { clip: 1.0, ..fixed(1, 0) };
        let mut f = Fosi::new(cfg, BaseOptimizer::gd(eta), 2).unwrap();
        f.set_spectrum(two_by_two_spectrum()).unwrap();
        let h = Matrix::from_row_slice(2, 2, &[2.5, 1.5, 1.5, 2.5]);
        let theta = v(&[1.0, 0.0]);
        let g = &h * &theta;
        assert_eq!(g, v(&[2.5, 1.5]));
        let p = f.update_parts(&theta, &g).unwrap();
        assert!((p.d1 - v(&[-0.5, -0.5])).norm() < 1e-15);
        assert!((&p.g2 - v(&[0.5, -0.5])).norm() < 1e-15);
        assert!((&p.d2 - v(&[-0.5 * eta, 0.5 * eta])).norm() < 1e-15);
        assert!((&p.theta - v(&[0.5 - 0.5 * eta, -0.5 + 0.5 * eta])).norm() < 1e-15);
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let along = v(&[s, s]).dot(&(&h * &p.theta));
        assert!(along.abs() < 1e-14);
    }

    #[test]
    fn gradient_inside_span_gives_pure_newton_step() {
        let mut f = Fosi::new(fixed(1, 0), BaseOptimizer::gd(0.3), 2).unwrap();
        f.set_spectrum(two_by_two_spectrum()).unwrap();
        let p = f.update_parts(&v(&[0.0, 0.0]), &v(&[2.0, 2.0])).unwrap();
        assert!(p.g2.norm() < 1e-15);
        assert!(p.d2.norm() < 1e-15);
        assert!((p.d1 - v(&[-0.5, -0.5])).norm() < 1e-15);
    }

    #[test]
    fn refresh_schedule() {
        let cfg = FosiConfig { interval: RefreshInterval::Fixed(5), warmup: Warmup::Iterations(3), ..FosiConfig::new(1, 0) };
        let f = Fosi::new(cfg, BaseOptimizer::gd(0.1), 10).unwrap();
        let hits: Vec<usize> = (0..20).filter(|&t| f.should_refresh(t)).collect();
        assert_eq!(hits, vec![3, 8, 13, 18]);
    }

    #[test]
    fn warmup_equal_to_interval() {
        let cfg = FosiConfig { interval: RefreshInterval::Auto { rho: 2.0 }, warmup: Warmup::Interval, ..FosiConfig::new(10, 0) };
        assert_eq!(cfg.resolve(100).unwrap(), (80, 80));
    }

    #[test]
    fn interval_heuristic_examples() {
        assert_eq!(interval_from_overhead(40, 1.1).unwrap(), 800);
        assert_eq!(interval_from_overhead(40, 2.0).unwrap(), 80);
        assert_eq!(interval_from_overhead(10, 1.05).unwrap(), 400);
        assert!(interval_from_overhead(10, 1.0).is_err());
    }

    #[test]
    fn interval_from_measurements() {
        assert_eq!(interval_from_timings(1.0, 1.0, 80.0, 1.1).unwrap(), 800);
        assert!(matches!(interval_from_timings(1.0, 1.1, 80.0, 1.1), Err(FosiError::OverheadUnattainable { .. })));
        assert_eq!(interval_from_timings(1.0, 1.0, 0.0, 1.1).unwrap(), 1);
    }

    #[test]
    fn scaling_examples() {
        let bounds = SpectralBounds { lambda_max: 10.0, head_next: 0.1, tail_prev: 0.01, lambda_min: 0.01 };
        let s = scale_learning_rate(1.0, OptimalLrForm::Gd, &bounds, f64::INFINITY);
        assert!((s.lr - 10.01 / 0.11).abs() < 1e-12);
        assert!((s.lr - 91.0).abs() < 0.01);
        assert_eq!(scale_learning_rate(0.5, OptimalLrForm::Gd, &bounds, 1.0).lr, 0.5);
        assert_eq!(scale_learning_rate(0.5, OptimalLrForm::Gd, &bounds, 3.0).lr, 1.5);

        let flat = SpectralBounds { lambda_max: 2.0, head_next: 2.0, tail_prev: 0.5, lambda_min: 0.5 };
        assert_eq!(scale_learning_rate(0.2, OptimalLrForm::HeavyBall, &flat, f64::INFINITY).lr, 0.2);

        let bad = SpectralBounds { lambda_min: -1.0, tail_prev: -1.0, ..bounds };
        let s = scale_learning_rate(0.2, OptimalLrForm::Gd, &bad, f64::INFINITY);
        assert!(s.fallback);
        assert_eq!(s.lr, 0.2);
        assert_eq!(scale_learning_rate(0.2, OptimalLrForm::None, &bounds, f64::INFINITY).lr, 0.2);
    }

    #[test]
    fn config_validation() {
        assert!(FosiConfig::new(0, 0).resolve(10).is_err());
        assert!(FosiConfig { alpha: 0.0, ..FosiConfig::new(1, 0) }.resolve(10).is_err());
        assert!(FosiConfig { alpha: 1.5, ..FosiConfig::new(1, 0) }.resolve(10).is_err());
        assert!(FosiConfig { clip: 0.5, ..FosiConfig::new(1, 0) }.resolve(10).is_err());
        assert!(FosiConfig { interval: RefreshInterval::Fixed(0), ..FosiConfig::new(1, 0) }.resolve(10).is_err());
        assert!(FosiConfig::new(6, 6).resolve(10).is_err());
    }

    #[test]
    fn config_deserializes_from_toml_shapes() {
        #[derive(Deserialize)]
        struct Wrap {
            fosi: FosiConfig,
        }
        let w: Wrap = toml::from_str("[fosi]\nk = 10\ninterval = { rho = 1.1 }\nwarmup = \"interval\"\nclip = 3.0\n").unwrap();
        assert_eq!(w.fosi.interval, RefreshInterval::Auto { rho: 1.1 });
        assert_eq!(w.fosi.warmup, Warmup::Interval);
        let w: Wrap = toml::from_str("[fosi]\nk = 2\nl = 1\ninterval = 50\nwarmup = 7\n").unwrap();
        assert_eq!(w.fosi.interval, RefreshInterval::Fixed(50));
        assert_eq!(w.fosi.warmup, Warmup::Iterations(7));
        assert_eq!(w.fosi.clip, f64::INFINITY);
        assert!(toml::from_str::<Wrap>("[fosi]\nk = 2\nwarmup = \"soon\"\n").is_err());
    }
}

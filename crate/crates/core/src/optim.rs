//! First-order base optimizers behind one interface.
//!
//! Every optimizer here produces a direction of the form `−η · q ⊙ ḡ`, where
//! `ḡ` is its momentum-combined gradient and `q` a positive diagonal inverse
//! preconditioner. Both pieces can be peeked without advancing state, which
//! is what the dense preconditioner analysis needs.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::Vector;

#[derive(Debug, Error, PartialEq)]
pub enum OptimError {
    #[error("gradient contains non-finite entries")]
    NonFiniteGradient,
    #[error("gradient has length {got}, optimizer state has length {expected}")]
    Dimension { expected: usize, got: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerKind {
    Gd,
    HeavyBall,
    Adam,
}

impl std::fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Gd => "gd",
            Self::HeavyBall => "heavy-ball",
            Self::Adam => "adam",
        })
    }
}

/// Closed form of an optimizer's optimal learning rate on a quadratic, as a
/// function of the extreme eigenvalues.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimalLrForm {
    /// `2 / (λ_max + λ_min)`.
    Gd,
    /// `4 / (√λ_max + √λ_min)²`.
    HeavyBall,
    None,
}

impl OptimalLrForm {
    /// `None` when the form does not exist or the eigenvalues are not both
    /// positive.
    pub fn evaluate(self, lambda_max: f64, lambda_min: f64) -> Option<f64> {
        if !(lambda_max > 0.0 && lambda_min > 0.0) {
            return None;
        }
        match self {
            Self::Gd => Some(2.0 / (lambda_max + lambda_min)),
            Self::HeavyBall => Some(4.0 / (lambda_max.sqrt() + lambda_min.sqrt()).powi(2)),
            Self::None => None,
        }
    }
}

/// How an optimizer combines past gradients.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Momentum {
    None,
    /// `b ← β b + g`.
    Buffer { beta: f64 },
    /// `m ← β m + (1 − β) g`, bias corrected by `1 − βᵗ`.
    Ema { beta: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeavyBallState {
    pub beta: f64,
    buffer: Option<Vector>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Option<Vector>,
    v: Option<Vector>,
    t: i32,
}

#[derive(Debug, Clone, PartialEq)]
enum Rule {
    Gd,
    HeavyBall(HeavyBallState),
    Adam(AdamState),
}

/// A stateful first-order stepper mapping gradients to descent directions.
#[derive(Debug, Clone, PartialEq)]
pub struct BaseOptimizer {
    lr: f64,
    rule: Rule,
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

impl BaseOptimizer {
    pub fn gd(lr: f64) -> Self {
        Self { lr, rule: Rule::Gd }
    }

    pub fn heavy_ball(lr: f64, beta: f64) -> Self {
        Self { lr, rule: Rule::HeavyBall(HeavyBallState { beta, buffer: None }) }
    }

    pub fn adam(lr: f64) -> Self {
        Self::adam_with(lr, ADAM_BETA1, ADAM_BETA2, ADAM_EPS)
    }

    pub fn adam_with(lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self { lr, rule: Rule::Adam(AdamState { beta1, beta2, eps, m: None, v: None, t: 0 }) }
    }

    pub fn kind(&self) -> OptimizerKind {
        match self.rule {
            Rule::Gd => OptimizerKind::Gd,
            Rule::HeavyBall(_) => OptimizerKind::HeavyBall,
            Rule::Adam(_) => OptimizerKind::Adam,
        }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn optimal_lr_form(&self) -> OptimalLrForm {
        match self.rule {
            Rule::Gd => OptimalLrForm::Gd,
            Rule::HeavyBall(_) => OptimalLrForm::HeavyBall,
            Rule::Adam(_) => OptimalLrForm::None,
        }
    }

    pub fn momentum(&self) -> Momentum {
        match &self.rule {
            Rule::Gd => Momentum::None,
            Rule::HeavyBall(s) => Momentum::Buffer { beta: s.beta },
            Rule::Adam(s) => Momentum::Ema { beta: s.beta1 },
        }
    }

    /// Advance the state with `g` and return `−η · q ⊙ ḡ`.
    pub fn step(&mut self, g: &Vector) -> Result<Vector, OptimError> {
        self.step_with_lr(g, self.lr)
    }

    /// Like [`step`](Self::step) with an overriding learning rate.
    pub fn step_with_lr(&mut self, g: &Vector, lr: f64) -> Result<Vector, OptimError> {
        check_gradient(g)?;
        match &mut self.rule {
            Rule::Gd => Ok(g * -lr),
            Rule::HeavyBall(s) => {
                let buf = match s.buffer.take() {
                    Some(b) => {
                        check_len(&b, g)?;
                        b * s.beta + g
                    }
                    None => g.clone(),
                };
                let d = &buf * -lr;
                s.buffer = Some(buf);
                Ok(d)
            }
            Rule::Adam(s) => {
                let (m, v) = adam_moments(s, g)?;
                s.t += 1;
                let (c1, c2) = bias_corrections(s, s.t);
                let d = m.zip_map(&v, |mi, vi| -lr * (mi / c1) / ((vi / c2).sqrt() + s.eps));
                s.m = Some(m);
                s.v = Some(v);
                Ok(d)
            }
        }
    }

    /// The momentum-combined gradient `ḡ` the next step would use.
    pub fn combined_gradient(&self, g: &Vector) -> Result<Vector, OptimError> {
        check_gradient(g)?;
        match &self.rule {
            Rule::Gd => Ok(g.clone()),
            Rule::HeavyBall(s) => match &s.buffer {
                Some(b) => {
                    check_len(b, g)?;
                    Ok(b * s.beta + g)
                }
                None => Ok(g.clone()),
            },
            Rule::Adam(s) => {
                let (m, _) = adam_moments(s, g)?;
                let (c1, _) = bias_corrections(s, s.t + 1);
                Ok(m / c1)
            }
        }
    }

    /// The diagonal `q` of the inverse preconditioner the next step would
    /// use, without advancing state.
    pub fn inverse_preconditioner_diag(&self, g: &Vector) -> Result<Vector, OptimError> {
        check_gradient(g)?;
        match &self.rule {
            Rule::Gd | Rule::HeavyBall(_) => Ok(Vector::from_element(g.len(), 1.0)),
            Rule::Adam(s) => {
                let (_, v) = adam_moments(s, g)?;
                let (_, c2) = bias_corrections(s, s.t + 1);
                Ok(v.map(|vi| 1.0 / ((vi / c2).sqrt() + s.eps)))
            }
        }
    }
}

fn check_gradient(g: &Vector) -> Result<(), OptimError> {
    if g.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(OptimError::NonFiniteGradient)
    }
}

fn check_len(state: &Vector, g: &Vector) -> Result<(), OptimError> {
    if state.len() == g.len() {
        Ok(())
    } else {
        Err(OptimError::Dimension { expected: state.len(), got: g.len() })
    }
}

fn adam_moments(s: &AdamState, g: &Vector) -> Result<(Vector, Vector), OptimError> {
    let m = match &s.m {
        Some(m) => {
            check_len(m, g)?;
            m * s.beta1 + g * (1.0 - s.beta1)
        }
        None => g * (1.0 - s.beta1),
    };
    let g2 = g.component_mul(g);
    let v = match &s.v {
        Some(v) => v * s.beta2 + g2 * (1.0 - s.beta2),
        None => g2 * (1.0 - s.beta2),
    };
    Ok((m, v))
}

fn bias_corrections(s: &AdamState, t: i32) -> (f64, f64) {
    (1.0 - s.beta1.powi(t), 1.0 - s.beta2.powi(t))
}

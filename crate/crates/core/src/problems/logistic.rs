use std::io::Read;
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;

use super::{rng, stream, ProblemError};
use crate::objective::{Objective, Stochastic};
use crate::{Matrix, Vector};

/// Standard deviation of each coordinate of the synthetic ground truth `θ*`.
pub const SYNTHETIC_THETA_SCALE: f64 = 1.0;

/// Binary logistic regression,
/// `f(θ) = (1/m) Σᵢ [softplus(xᵢᵀθ) − yᵢ xᵢᵀθ] + ½λ‖θ‖²`.
#[derive(Debug, Clone)]
pub struct LogisticProblem {
    x: Matrix,
    y: Vector,
    reg: f64,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

impl LogisticProblem {
    pub fn new(x: Matrix, y: Vector, reg: f64) -> Result<Self, ProblemError> {
        if x.nrows() == 0 || x.ncols() == 0 || y.len() != x.nrows() {
            return Err(ProblemError::InvalidArguments(format!(
                "need an m x d feature matrix with m, d >= 1 and m labels, got {:?} and {}",
                x.shape(),
                y.len()
            )));
        }
        if let Some(bad) = y.iter().find(|v| **v != 0.0 && **v != 1.0) {
            return Err(ProblemError::InvalidArguments(format!("labels must be 0 or 1, found {bad}")));
        }
        if !(reg >= 0.0) || x.iter().any(|v| !v.is_finite()) {
            return Err(ProblemError::InvalidArguments("features must be finite and the L2 weight nonnegative".into()));
        }
        Ok(Self { x, y, reg })
    }

    /// Standard normal features, a Gaussian ground truth `θ*` and labels
    /// drawn from `Bernoulli(σ(Xθ*))`.
    pub fn synthetic(m: usize, d: usize, seed: u64, reg: f64) -> Result<Self, ProblemError> {
        Self::synthetic_scaled(m, d, seed, reg, SYNTHETIC_THETA_SCALE)
    }

    /// [`synthetic`](Self::synthetic) with a chosen standard deviation for
    /// the coordinates of `θ*`.
    pub fn synthetic_scaled(m: usize, d: usize, seed: u64, reg: f64, theta_scale: f64) -> Result<Self, ProblemError> {
        if m == 0 || d == 0 {
            return Err(ProblemError::InvalidArguments(format!("need m, d >= 1, got m = {m}, d = {d}")));
        }
        let mut r = rng(seed, stream::FEATURES);
        let x = Matrix::from_fn(m, d, |_, _| r.sample::<f64, _>(StandardNormal));
        let mut r = rng(seed, stream::TRUTH);
        let truth = Vector::from_fn(d, |_, _| theta_scale * r.sample::<f64, _>(StandardNormal));
        let mut r = rng(seed, stream::LABELS);
        let p = (&x * truth).map(sigmoid);
        let y = p.map(|pi| if r.random::<f64>() < pi { 1.0 } else { 0.0 });
        Self::new(x, y, reg)
    }

    /// Read `d` feature columns and a trailing 0/1 label column, with a
    /// header row.
    pub fn from_csv_path(path: &Path, reg: f64) -> Result<Self, ProblemError> {
        let file = std::fs::File::open(path).map_err(|source| ProblemError::Io { path: path.display().to_string(), source })?;
        Self::from_csv_reader(file, reg)
    }

    pub fn from_csv_reader<R: Read>(input: R, reg: f64) -> Result<Self, ProblemError> {
        let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
        let header_len = reader
            .headers()
            .map_err(|e| ProblemError::Csv { line: 1, msg: e.to_string() })?
            .len();
        if header_len < 2 {
            return Err(ProblemError::Csv { line: 1, msg: "need at least one feature column and a label column".into() });
        }
        let d = header_len - 1;
        let mut features = Vec::new();
        let mut labels = Vec::new();
        for rec in reader.records() {
            let rec = rec.map_err(|e| ProblemError::Csv {
                line: e.position().map_or(0, |p| p.line()),
                msg: e.to_string(),
            })?;
            let line = rec.position().map_or(0, |p| p.line());
            for field in rec.iter().take(d) {
                let v: f64 = field
                    .trim()
                    .parse()
                    .map_err(|_| ProblemError::Csv { line, msg: format!("feature {field:?} is not a number") })?;
                features.push(v);
            }
            let label = rec[d].trim();
            labels.push(match label {
                "0" => 0.0,
                "1" => 1.0,
                other => return Err(ProblemError::Label { line, value: other.to_string() }),
            });
        }
        if labels.is_empty() {
            return Err(ProblemError::Csv { line: 1, msg: "no data rows".into() });
        }
        let x = Matrix::from_row_slice(labels.len(), d, &features);
        Self::new(x, Vector::from_vec(labels), reg)
    }

    pub fn features(&self) -> &Matrix {
        &self.x
    }

    pub fn labels(&self) -> &Vector {
        &self.y
    }

    pub fn regularization(&self) -> f64 {
        self.reg
    }

    fn row_dot(&self, i: usize, v: &Vector) -> f64 {
        self.x.row(i).iter().zip(v.iter()).map(|(a, b)| a * b).sum()
    }

    fn add_row(&self, out: &mut Vector, i: usize, scale: f64) {
        for (o, xij) in out.iter_mut().zip(self.x.row(i).iter()) {
            *o += scale * xij;
        }
    }

    fn value_rows<I: Iterator<Item = usize> + Clone>(&self, theta: &Vector, rows: I) -> f64 {
        let count = rows.clone().count() as f64;
        let loss: f64 = rows
            .map(|i| {
                let z = self.row_dot(i, theta);
                softplus(z) - self.y[i] * z
            })
            .sum();
        loss / count + 0.5 * self.reg * theta.norm_squared()
    }

    fn gradient_rows<I: Iterator<Item = usize> + Clone>(&self, theta: &Vector, rows: I) -> Vector {
        let count = rows.clone().count() as f64;
        let mut g = theta * self.reg;
        for i in rows {
            let r = (sigmoid(self.row_dot(i, theta)) - self.y[i]) / count;
            self.add_row(&mut g, i, r);
        }
        g
    }

    fn hvp_rows<I: Iterator<Item = usize> + Clone>(&self, theta: &Vector, v: &Vector, rows: I) -> Vector {
        let count = rows.clone().count() as f64;
        let mut out = v * self.reg;
        for i in rows {
            let s = sigmoid(self.row_dot(i, theta));
            let w = s * (1.0 - s) * self.row_dot(i, v) / count;
            self.add_row(&mut out, i, w);
        }
        out
    }
}

impl Objective for LogisticProblem {
    fn dim(&self) -> usize {
        self.x.ncols()
    }

    fn value(&self, theta: &Vector) -> f64 {
        let z = &self.x * theta;
        let loss: f64 = z.iter().zip(self.y.iter()).map(|(zi, yi)| softplus(*zi) - yi * zi).sum();
        loss / self.x.nrows() as f64 + 0.5 * self.reg * theta.norm_squared()
    }

    fn gradient(&self, theta: &Vector) -> Vector {
        let r = (&self.x * theta).map(sigmoid) - &self.y;
        self.x.tr_mul(&r) / self.x.nrows() as f64 + theta * self.reg
    }

    fn hvp(&self, theta: &Vector, v: &Vector) -> Vector {
        let s = (&self.x * theta).map(|z| {
            let p = sigmoid(z);
            p * (1.0 - p)
        });
        let xv = &self.x * v;
        self.x.tr_mul(&s.component_mul(&xv)) / self.x.nrows() as f64 + v * self.reg
    }
}

impl Stochastic for LogisticProblem {
    fn dataset_size(&self) -> usize {
        self.x.nrows()
    }

    fn value_on(&self, theta: &Vector, batch: &[usize]) -> f64 {
        self.value_rows(theta, batch.iter().copied())
    }

    fn gradient_on(&self, theta: &Vector, batch: &[usize]) -> Vector {
        self.gradient_rows(theta, batch.iter().copied())
    }

    fn hvp_on(&self, theta: &Vector, v: &Vector, batch: &[usize]) -> Vector {
        self.hvp_rows(theta, v, batch.iter().copied())
    }
}

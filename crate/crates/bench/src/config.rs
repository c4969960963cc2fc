//! Experiment files.
//!
//! One TOML file describes one experiment:
//!
//! ```toml
//! name = "spectrum-n100"
//! output_dir = "out/spectrum-n100"   # relative to the file
//! record_every = 1
//! threshold = 1e-6                   # optional, for iterations-to-threshold
//! timing = false                     # true keeps wall-clock times in traces
//!
//! [stop]
//! max_iters = 500
//! grad_tol = 1e-12                   # optional
//!
//! [problem]
//! family = "spectrum"                # spectrum | fbzeta | appendix-e | random-spd | diagonal | logistic
//! n = 100
//! lambda_1 = 5.0
//! seed = 0
//!
//! [stochastic]                       # optional: minibatch gradients
//! batch_size = 32
//! seed = 0
//! ese_batch_size = 512               # optional, default is the current batch
//!
//! [[optimizers]]
//! id = "gd"
//! kind = "gd"                        # gd | heavy-ball | adam
//! lr = "auto"                        # number, or closed-form optimum on quadratics
//!
//! [[optimizers]]
//! id = "fosi-gd"
//! kind = "gd"
//! lr = "auto"
//! baseline = "gd"                    # optional, for the ratio table
//! [optimizers.fosi]
//! k = 10
//!
//! [sweep]                            # used by `sweep` only
//! lrs = [1e-3, 1e-2, 1e-1]
//! momenta = [0.9]                    # optional, heavy-ball beta / Adam beta1
//! ```

use std::path::{Path, PathBuf};

use fosi::fosi::{FosiConfig, StoppingRule};
use fosi::optim::{OptimizerKind, ADAM_BETA2, ADAM_EPS};
use fosi::problems::{
    gen_appendix_e_quadratic, gen_fbzeta_quadratic, gen_random_spd, gen_spectrum_quadratic, LogisticProblem,
    QuadraticProblem,
};
use fosi::{BaseOptimizer, Objective, Vector};
use serde::Deserialize;

use crate::BenchError;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub name: String,
    pub output_dir: PathBuf,
    #[serde(default = "one")]
    pub record_every: usize,
    #[serde(default)]
    pub threshold: Option<f64>,
    #[serde(default)]
    pub timing: bool,
    pub stop: StoppingRule,
    pub problem: ProblemSpec,
    #[serde(default)]
    pub stochastic: Option<StochasticSpec>,
    pub optimizers: Vec<OptimizerSpec>,
    #[serde(default)]
    pub sweep: Option<SweepSpec>,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum ProblemSpec {
    Spectrum {
        n: usize,
        lambda_1: f64,
        seed: u64,
    },
    Fbzeta {
        b: f64,
        zeta: usize,
        seed: u64,
    },
    AppendixE {
        seed: u64,
    },
    RandomSpd {
        n: usize,
        seed: u64,
    },
    Diagonal {
        values: Vec<f64>,
        theta0: Vec<f64>,
    },
    /// Synthetic (`m`, `d`, `seed`) unless `path` names a CSV file. Starts
    /// at the origin.
    Logistic {
        #[serde(default)]
        m: Option<usize>,
        #[serde(default)]
        d: Option<usize>,
        #[serde(default)]
        seed: u64,
        #[serde(default)]
        reg: f64,
        #[serde(default)]
        path: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StochasticSpec {
    pub batch_size: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub ese_batch_size: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum LearningRate {
    Value(f64),
    Named(AutoLr),
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AutoLr {
    /// `2/(λ₁+λ_n)` for GD, `2/(√λ₁+√λ_n)²` for heavy-ball.
    Auto,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerSpec {
    pub id: String,
    pub kind: OptimizerKind,
    pub lr: LearningRate,
    /// Heavy-ball `β` or Adam `β₁`; defaults to 0.9.
    #[serde(default)]
    pub beta: Option<f64>,
    #[serde(default)]
    pub fosi: Option<FosiConfig>,
    /// Id of the plain run to compare a FOSI run against.
    #[serde(default)]
    pub baseline: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub lrs: Vec<f64>,
    #[serde(default)]
    pub momenta: Vec<f64>,
}

pub const DEFAULT_MOMENTUM: f64 = 0.9;

impl ExperimentSpec {
    pub fn from_toml(text: &str) -> Result<Self, BenchError> {
        let spec: Self = toml::from_str(text).map_err(|e| BenchError::Config(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    /// Read a spec; a relative output directory or dataset path is resolved
    /// against the file's directory.
    pub fn load(path: &Path) -> Result<Self, BenchError> {
        let text = std::fs::read_to_string(path).map_err(|e| BenchError::io(path, e))?;
        let mut spec = Self::from_toml(&text).map_err(|e| match e {
            BenchError::Config(msg) => BenchError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })?;
        let dir = path.parent().unwrap_or(Path::new("."));
        if spec.output_dir.is_relative() {
            spec.output_dir = dir.join(&spec.output_dir);
        }
        if let ProblemSpec::Logistic { path: Some(p), .. } = &mut spec.problem {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        }
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), BenchError> {
        if self.optimizers.is_empty() {
            return Err(BenchError::Config("at least one optimizer is required".into()));
        }
        if self.stop.max_iters == 0 {
            return Err(BenchError::Config("stop.max_iters must be at least 1".into()));
        }
        let mut ids: Vec<&str> = self.optimizers.iter().map(|o| o.id.as_str()).collect();
        ids.sort_unstable();
        if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
            return Err(BenchError::Config(format!("duplicate optimizer id {:?}", w[0])));
        }
        for o in &self.optimizers {
            if o.id.is_empty() || o.id.contains(['/', '\\']) {
                return Err(BenchError::Config(format!("optimizer id {:?} must be a plain file name", o.id)));
            }
            if let Some(b) = &o.baseline {
                if !self.optimizers.iter().any(|p| &p.id == b) {
                    return Err(BenchError::Config(format!("{}: unknown baseline {b:?}", o.id)));
                }
            }
        }
        Ok(())
    }
}

/// A constructed problem together with its start point.
#[derive(Debug, Clone)]
pub enum Problem {
    Quadratic(QuadraticProblem),
    Logistic(LogisticProblem),
}

impl Problem {
    pub fn build(spec: &ProblemSpec) -> Result<Self, BenchError> {
        let p = match spec {
            ProblemSpec::Spectrum { n, lambda_1, seed } => Self::Quadratic(gen_spectrum_quadratic(*n, *lambda_1, *seed)?),
            ProblemSpec::Fbzeta { b, zeta, seed } => Self::Quadratic(gen_fbzeta_quadratic(*b, *zeta, *seed)?),
            ProblemSpec::AppendixE { seed } => Self::Quadratic(gen_appendix_e_quadratic(*seed)?),
            ProblemSpec::RandomSpd { n, seed } => Self::Quadratic(gen_random_spd(*n, *seed)?),
            ProblemSpec::Diagonal { values, theta0 } => {
                Self::Quadratic(QuadraticProblem::diagonal(values, Vector::from_column_slice(theta0))?)
            }
            ProblemSpec::Logistic { m, d, seed, reg, path } => match (path, m, d) {
                (Some(path), _, _) => Self::Logistic(LogisticProblem::from_csv_path(path, *reg)?),
                (None, Some(m), Some(d)) => Self::Logistic(LogisticProblem::synthetic(*m, *d, *seed, *reg)?),
                _ => return Err(BenchError::Config("logistic problem needs either path or both m and d".into())),
            },
        };
        Ok(p)
    }

    pub fn objective(&self) -> &dyn Objective {
        match self {
            Self::Quadratic(q) => q,
            Self::Logistic(l) => l,
        }
    }

    pub fn theta0(&self) -> Vector {
        match self {
            Self::Quadratic(q) => q.theta0().clone(),
            Self::Logistic(l) => Vector::zeros(l.dim()),
        }
    }
}

impl OptimizerSpec {
    pub fn momentum(&self) -> f64 {
        self.beta.unwrap_or(DEFAULT_MOMENTUM)
    }

    /// The numeric learning rate, resolving `"auto"` on quadratics.
    pub fn resolve_lr(&self, problem: &Problem) -> Result<f64, BenchError> {
        match self.lr {
            LearningRate::Value(lr) if lr > 0.0 && lr.is_finite() => Ok(lr),
            LearningRate::Value(lr) => Err(BenchError::Config(format!("{}: learning rate must be positive, got {lr}", self.id))),
            LearningRate::Named(AutoLr::Auto) => {
                let Problem::Quadratic(q) = problem else {
                    return Err(BenchError::Config(format!("{}: lr = \"auto\" needs a quadratic problem", self.id)));
                };
                let (hi, lo) = (q.lambda_max(), q.lambda_min());
                match self.kind {
                    OptimizerKind::Gd => Ok(2.0 / (hi + lo)),
                    OptimizerKind::HeavyBall => Ok(2.0 / (hi.sqrt() + lo.sqrt()).powi(2)),
                    OptimizerKind::Adam => Err(BenchError::Config(format!("{}: Adam has no closed-form learning rate", self.id))),
                }
            }
        }
    }

    pub fn base_optimizer(&self, lr: f64, momentum: f64) -> BaseOptimizer {
        match self.kind {
            OptimizerKind::Gd => BaseOptimizer::gd(lr),
            OptimizerKind::HeavyBall => BaseOptimizer::heavy_ball(lr, momentum),
            OptimizerKind::Adam => BaseOptimizer::adam_with(lr, momentum, ADAM_BETA2, ADAM_EPS),
        }
    }

    pub fn has_momentum(&self) -> bool {
        self.kind != OptimizerKind::Gd
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
name = "t"
output_dir = "out"
[stop]
max_iters = 10
[problem]
family = "spectrum"
n = 10
lambda_1 = 5.0
seed = 0
[[optimizers]]
id = "gd"
kind = "gd"
lr = "auto"
"#;

    #[test]
    fn parses_minimal_spec() {
        let s = ExperimentSpec::from_toml(MINIMAL).unwrap();
        assert_eq!(s.record_every, 1);
        assert_eq!(s.problem, ProblemSpec::Spectrum { n: 10, lambda_1: 5.0, seed: 0 });
        assert_eq!(s.optimizers[0].lr, LearningRate::Named(AutoLr::Auto));
    }

    #[test]
    fn rejects_empty_optimizer_list_and_duplicates() {
        let none = MINIMAL.split("[[optimizers]]").next().unwrap().to_string() + "optimizers = []\n";
        assert!(ExperimentSpec::from_toml(&none).is_err());
        let dup = format!("{MINIMAL}[[optimizers]]\nid = \"gd\"\nkind = \"adam\"\nlr = 0.1\n");
        assert!(ExperimentSpec::from_toml(&dup).is_err());
    }

    #[test]
    fn rejects_unknown_keys() {
        let bad = MINIMAL.replace("record_every", "x").replace("name = \"t\"", "name = \"t\"\nbogus = 1");
        assert!(ExperimentSpec::from_toml(&bad).is_err());
    }

    #[test]
    fn auto_lr_closed_forms() {
        let p = Problem::build(&ProblemSpec::Diagonal { values: vec![4.0, 1.0], theta0: vec![1.0, 1.0] }).unwrap();
        let mut o = ExperimentSpec::from_toml(MINIMAL).unwrap().optimizers.remove(0);
        assert_eq!(o.resolve_lr(&p).unwrap(), 0.4);
        o.kind = OptimizerKind::HeavyBall;
        assert_eq!(o.resolve_lr(&p).unwrap(), 2.0 / 9.0);
        o.kind = OptimizerKind::Adam;
        assert!(o.resolve_lr(&p).is_err());
    }
}

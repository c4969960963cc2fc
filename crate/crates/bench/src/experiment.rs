//! Running experiments and learning-rate sweeps.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use fosi::fosi::{optimize, optimize_stochastic, run_base, run_base_stochastic, FosiConfig};
use fosi::objective::BatchSchedule;
use fosi::trace::fmt_f64;
use fosi::{BaseOptimizer, RunOutcome, StoppingRule, Vector};

use crate::config::{ExperimentSpec, OptimizerSpec, Problem, StochasticSpec};
use crate::BenchError;

pub const SUMMARY_HEADER: [&str; 4] = ["optimizer_id", "final_f", "iters_to_threshold", "status"];
pub const RATIO_HEADER: [&str; 5] = ["optimizer_id", "baseline_id", "final_f", "baseline_final_f", "ratio"];
pub const SWEEP_HEADER: [&str; 5] = ["optimizer_id", "lr", "momentum", "final_f", "status"];

/// One row of `summary.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub optimizer_id: String,
    pub final_f: f64,
    pub iters_to_threshold: Option<usize>,
    pub status: String,
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub summary: Vec<SummaryRow>,
    /// `(fosi id, baseline id, ratio of final values)`.
    pub ratios: Vec<(String, String, f64)>,
    pub trace_files: Vec<PathBuf>,
    pub outcomes: Vec<RunOutcome>,
}

/// Run one optimizer configuration to completion.
pub fn run_single(
    problem: &Problem,
    theta0: &Vector,
    base: BaseOptimizer,
    fosi_cfg: Option<&FosiConfig>,
    stop: &StoppingRule,
    stochastic: Option<&StochasticSpec>,
) -> Result<RunOutcome, BenchError> {
    let outcome = match (stochastic, problem) {
        (None, p) => match fosi_cfg {
            Some(cfg) => optimize(p.objective(), theta0, cfg, base, stop)?,
            None => run_base(p.objective(), theta0, base, stop)?,
        },
        (Some(s), Problem::Logistic(p)) => {
            let mut schedule = BatchSchedule::new(p.features().nrows(), s.batch_size, s.seed, s.ese_batch_size)?;
            match fosi_cfg {
                Some(cfg) => optimize_stochastic(p, theta0, cfg, base, stop, &mut schedule)?,
                None => run_base_stochastic(p, theta0, base, stop, &mut schedule)?,
            }
        }
        (Some(_), Problem::Quadratic(_)) => {
            return Err(BenchError::Config("minibatch training needs a finite-sum (logistic) problem".into()))
        }
    };
    Ok(outcome)
}

/// Run every optimizer of `spec` in parallel, then write one trace CSV per
/// optimizer, `summary.csv` and `ratios.csv` into the output directory.
/// Diverged runs are reported in the summary, not as errors.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentResult, BenchError> {
    spec.validate()?;
    let problem = Problem::build(&spec.problem)?;
    let theta0 = problem.theta0();
    let plans: Vec<(f64, f64)> = spec
        .optimizers
        .iter()
        .map(|o| Ok((o.resolve_lr(&problem)?, o.momentum())))
        .collect::<Result<_, BenchError>>()?;

    let outcomes = run_parallel(spec.optimizers.iter().zip(&plans).map(|(o, &(lr, beta))| {
        let problem = &problem;
        let theta0 = &theta0;
        move || run_single(problem, theta0, o.base_optimizer(lr, beta), o.fosi.as_ref(), &spec.stop, spec.stochastic.as_ref())
    }))?;

    std::fs::create_dir_all(&spec.output_dir).map_err(|e| BenchError::io(&spec.output_dir, e))?;
    let mut trace_files = Vec::new();
    let mut summary = Vec::new();
    for (o, outcome) in spec.optimizers.iter().zip(&outcomes) {
        let path = spec.output_dir.join(format!("{}.csv", o.id));
        let file = File::create(&path).map_err(|e| BenchError::io(&path, e))?;
        outcome.trace.write_csv(BufWriter::new(file), spec.record_every, spec.timing)?;
        trace_files.push(path);
        summary.push(SummaryRow {
            optimizer_id: o.id.clone(),
            final_f: outcome.trace.final_value().unwrap_or(f64::NAN),
            iters_to_threshold: spec.threshold.and_then(|t| outcome.trace.iterations_to(t)),
            status: outcome.status.label().to_string(),
        });
    }
    write_summary(&spec.output_dir.join("summary.csv"), &summary)?;

    let ratios = baseline_ratios(&spec.optimizers, &summary);
    let path = spec.output_dir.join("ratios.csv");
    let mut w = csv_writer(&path)?;
    w.write_record(RATIO_HEADER)?;
    for (id, base, ratio) in &ratios {
        let f = |name: &str| summary.iter().find(|r| r.optimizer_id == name).map_or(f64::NAN, |r| r.final_f);
        w.write_record([id.clone(), base.clone(), fmt_f64(f(id)), fmt_f64(f(base)), fmt_f64(*ratio)])?;
    }
    w.flush().map_err(|e| BenchError::io(&path, e))?;

    Ok(ExperimentResult { summary, ratios, trace_files, outcomes })
}

/// Pair each FOSI entry with its baseline: the named one, or else the first
/// plain entry of the same kind.
fn baseline_ratios(optimizers: &[OptimizerSpec], summary: &[SummaryRow]) -> Vec<(String, String, f64)> {
    let mut out = Vec::new();
    for (i, o) in optimizers.iter().enumerate() {
        if o.fosi.is_none() {
            continue;
        }
        let base = match &o.baseline {
            Some(b) => optimizers.iter().position(|p| &p.id == b),
            None => optimizers.iter().position(|p| p.fosi.is_none() && p.kind == o.kind),
        };
        if let Some(j) = base {
            out.push((o.id.clone(), optimizers[j].id.clone(), summary[i].final_f / summary[j].final_f));
        }
    }
    out
}

fn write_summary(path: &Path, rows: &[SummaryRow]) -> Result<(), BenchError> {
    let mut w = csv_writer(path)?;
    w.write_record(SUMMARY_HEADER)?;
    for r in rows {
        w.write_record([
            r.optimizer_id.clone(),
            fmt_f64(r.final_f),
            r.iters_to_threshold.map_or(String::new(), |i| i.to_string()),
            r.status.clone(),
        ])?;
    }
    w.flush().map_err(|e| BenchError::io(path, e))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>, BenchError> {
    let file = File::create(path).map_err(|e| BenchError::io(path, e))?;
    Ok(csv::Writer::from_writer(BufWriter::new(file)))
}

/// Run independent jobs on scoped threads, returning results in job order.
pub fn run_parallel<T, F, I>(jobs: I) -> Result<Vec<T>, BenchError>
where
    T: Send,
    F: FnOnce() -> Result<T, BenchError> + Send,
    I: IntoIterator<Item = F>,
{
    let jobs: Vec<F> = jobs.into_iter().collect();
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(jobs.len().max(1));
    let mut slots: Vec<Option<Result<T, BenchError>>> = (0..jobs.len()).map(|_| None).collect();
    let queue = std::sync::Mutex::new(jobs.into_iter().enumerate().collect::<Vec<_>>().into_iter());
    let results = std::sync::Mutex::new(&mut slots);
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let next = queue.lock().unwrap().next();
                let Some((i, job)) = next else { break };
                let r = job();
                results.lock().unwrap()[i] = Some(r);
            });
        }
    });
    slots.into_iter().map(|r| r.expect("every job ran")).collect()
}

/// One cell of a learning-rate sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepCell {
    pub optimizer_id: String,
    pub lr: f64,
    /// `None` for optimizers without momentum.
    pub momentum: Option<f64>,
    pub final_f: f64,
    pub status: String,
}

/// Run every optimizer of `spec` at every learning rate (and momentum, for
/// optimizers that have one) of its sweep section, writing `sweep.csv`.
pub fn sweep_learning_rates(spec: &ExperimentSpec) -> Result<Vec<SweepCell>, BenchError> {
    spec.validate()?;
    let sweep = spec.sweep.as_ref().ok_or(BenchError::EmptySweep)?;
    if sweep.lrs.is_empty() {
        return Err(BenchError::EmptySweep);
    }
    if let Some(bad) = sweep.lrs.iter().chain(&sweep.momenta).find(|x| !x.is_finite() || **x < 0.0) {
        return Err(BenchError::Config(format!("sweep values must be finite and nonnegative, found {bad}")));
    }
    let problem = Problem::build(&spec.problem)?;
    let theta0 = problem.theta0();

    let mut cells = Vec::new();
    for o in &spec.optimizers {
        let momenta: Vec<Option<f64>> = if !o.has_momentum() {
            vec![None]
        } else if sweep.momenta.is_empty() {
            vec![Some(o.momentum())]
        } else {
            sweep.momenta.iter().map(|&m| Some(m)).collect()
        };
        for &lr in &sweep.lrs {
            for &m in &momenta {
                cells.push((o, lr, m));
            }
        }
    }
    let outcomes = run_parallel(cells.iter().map(|&(o, lr, m)| {
        let problem = &problem;
        let theta0 = &theta0;
        move || {
            let base = o.base_optimizer(lr, m.unwrap_or(0.0));
            run_single(problem, theta0, base, o.fosi.as_ref(), &spec.stop, spec.stochastic.as_ref())
        }
    }))?;

    let grid: Vec<SweepCell> = cells
        .iter()
        .zip(&outcomes)
        .map(|(&(o, lr, momentum), out)| SweepCell {
            optimizer_id: o.id.clone(),
            lr,
            momentum,
            final_f: out.trace.final_value().unwrap_or(f64::NAN),
            status: out.status.label().to_string(),
        })
        .collect();

    std::fs::create_dir_all(&spec.output_dir).map_err(|e| BenchError::io(&spec.output_dir, e))?;
    let path = spec.output_dir.join("sweep.csv");
    let mut w = csv_writer(&path)?;
    w.write_record(SWEEP_HEADER)?;
    for c in &grid {
        w.write_record([
            c.optimizer_id.clone(),
            fmt_f64(c.lr),
            c.momentum.map_or(String::new(), fmt_f64),
            fmt_f64(c.final_f),
            c.status.clone(),
        ])?;
    }
    w.flush().map_err(|e| BenchError::io(&path, e))?;
    Ok(grid)
}

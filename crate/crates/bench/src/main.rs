use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use fosi_bench::{
    check_problem, emit_plot, run_experiment, sweep_learning_rates, verify_lemmas, CheckSpec, ExperimentSpec,
    GRADIENT_TOL, HVP_TOL,
};

#[derive(Parser)]
#[command(name = "fosi-bench", about = "Run and inspect fosi optimizer experiments", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every optimizer of an experiment file and write traces and summaries.
    Run { spec: PathBuf },
    /// Run the learning-rate grid of an experiment file and write sweep.csv.
    Sweep { spec: PathBuf },
    /// Draw learning curves from trace CSVs into an SVG file.
    Plot {
        #[arg(required = true)]
        traces: Vec<PathBuf>,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Check the preconditioner claims on a random SPD matrix.
    VerifyLemmas {
        #[arg(long, default_value_t = 50)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Finite-difference checks of a problem's gradient and HVP.
    Check { problem_spec: PathBuf },
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Run { spec } => {
            let spec = ExperimentSpec::load(&spec)?;
            let result = run_experiment(&spec)?;
            println!("{}: wrote {} traces to {}", spec.name, result.trace_files.len(), spec.output_dir.display());
            for r in &result.summary {
                let iters = r.iters_to_threshold.map_or("-".to_string(), |i| i.to_string());
                println!("  {:<20} final_f {:<24e} iters_to_threshold {:<8} {}", r.optimizer_id, r.final_f, iters, r.status);
            }
            for (id, base, ratio) in &result.ratios {
                println!("  {id} / {base}: {ratio:e}");
            }
            Ok(true)
        }
        Command::Sweep { spec } => {
            let spec = ExperimentSpec::load(&spec)?;
            let grid = sweep_learning_rates(&spec)?;
            for c in &grid {
                let m = c.momentum.map_or("-".to_string(), |m| m.to_string());
                println!("  {:<20} lr {:<10e} momentum {:<6} final_f {:<24e} {}", c.optimizer_id, c.lr, m, c.final_f, c.status);
            }
            println!("wrote {}", spec.output_dir.join("sweep.csv").display());
            Ok(true)
        }
        Command::Plot { traces, output } => {
            emit_plot(&traces, &output)?;
            println!("wrote {}", output.display());
            Ok(true)
        }
        Command::VerifyLemmas { n, seed } => {
            let checks = verify_lemmas(n, seed)?;
            for c in &checks {
                println!("{} {} ({})", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
            }
            Ok(checks.iter().all(|c| c.passed))
        }
        Command::Check { problem_spec } => {
            let text = std::fs::read_to_string(&problem_spec).with_context(|| format!("reading {}", problem_spec.display()))?;
            let spec: CheckSpec = toml::from_str(&text).with_context(|| format!("parsing {}", problem_spec.display()))?;
            let mut ok = true;
            for (label, r) in check_problem(&spec)? {
                let pass = r.passes(GRADIENT_TOL, HVP_TOL);
                ok &= pass;
                println!(
                    "{} at {label}: gradient {:.3e}, symmetry {:.3e}, linearity {:.3e} over {} trials",
                    if pass { "PASS" } else { "FAIL" },
                    r.gradient_error,
                    r.symmetry_error,
                    r.linearity_error,
                    r.trials
                );
            }
            Ok(ok)
        }
    }
}

//! `hrmsbo`: run experiment grids, build ground truths, regenerate reports
//! and perform single optimization runs.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;

use hrmsbo::acquisition::AcquisitionKind;
use hrmsbo::benchmarks;
use hrmsbo::gp::Hyperparameters;
use hrmsbo::harness::{self, ExperimentPlan};
use hrmsbo::optimizer::{self, HrmsConfig, Objective, TerminationReason};
use hrmsbo::Error;

const EXIT_FAILURE: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_IO: u8 = 3;
const EXIT_ALL_FAILED: u8 = 4;

#[derive(Parser)]
#[command(name = "hrmsbo", version, about = "Hybrid repeat/multi-point sampling Bayesian optimization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute an experiment grid; resumes if DIR already holds records.
    Run {
        #[arg(long)]
        plan: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        parallelism: usize,
    },
    /// Build a ground-truth model and cache it as DIR/truth.json.
    Truth {
        #[arg(long)]
        objective: String,
        #[arg(long, default_value_t = harness::DEFAULT_TRUTH_GRID)]
        grid: usize,
        #[arg(long, default_value_t = harness::DEFAULT_TRUTH_REPS)]
        reps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Regenerate summary.csv and plotdata/ from DIR/records.csv.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
    },
    /// One optimization run; the result is printed as JSON.
    Single {
        #[arg(long)]
        objective: String,
        #[arg(long, default_value = "ucb")]
        acq: String,
        #[arg(long, default_value_t = 1)]
        rs: usize,
        #[arg(long, default_value_t = 1)]
        ms: usize,
        #[arg(long, default_value_t = 500)]
        budget: usize,
        #[arg(long, default_value_t = 20)]
        n_seed: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

enum Failure {
    Core(Error),
    AllRunsFailed(usize),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::InvalidInput(_) | Error::DimensionMismatch { .. } => EXIT_CONFIG,
        Error::Io { .. } | Error::Data { .. } => EXIT_IO,
        _ => EXIT_FAILURE,
    }
}

#[derive(Serialize)]
struct SingleOutput {
    objective: String,
    acquisition: AcquisitionKind,
    rs: usize,
    ms: usize,
    seed: u64,
    x_hat: Vec<f64>,
    y_hat: f64,
    x_err: f64,
    y_err: f64,
    evals_used: usize,
    missing: usize,
    iters: usize,
    terminated_early: bool,
    termination: TerminationReason,
    hyperparameters: Hyperparameters,
}

fn single(
    objective: &str,
    acq: &str,
    rs: usize,
    ms: usize,
    budget: usize,
    n_seed: usize,
    seed: u64,
) -> Result<(), Failure> {
    let f = benchmarks::by_name(objective)?;
    let kind: AcquisitionKind = acq.parse()?;
    let mut config = HrmsConfig::new(kind, rs, ms, f.bounds().clone(), seed);
    config.budget_evals = budget;
    config.n_seed = n_seed;
    let r = optimizer::run(&config, &f)?;
    let out = SingleOutput {
        objective: objective.to_string(),
        acquisition: kind,
        rs,
        ms,
        seed,
        x_err: r.x_hat.distance(f.true_min_x()),
        y_err: (r.y_hat - f.true_min_y()).abs(),
        x_hat: r.x_hat.coords().to_vec(),
        y_hat: r.y_hat,
        evals_used: r.evals_used,
        missing: r.missing,
        iters: r.iters,
        terminated_early: r.terminated_early,
        termination: r.termination_reason,
        hyperparameters: r.final_model.hyper().clone(),
    };
    let text = serde_json::to_string_pretty(&out).map_err(|e| Error::data("<stdout>", e))?;
    println!("{text}");
    Ok(())
}

fn run(plan_path: &Path, out: &Path, parallelism: usize) -> Result<(), Failure> {
    let plan = ExperimentPlan::load(plan_path)?;
    let outcome = harness::run_grid(&plan, out, parallelism)?;
    for f in &outcome.failures {
        eprintln!("failed: {} ({})", f.run_id, f.error);
    }
    println!(
        "{} records ({} resumed), {} failures in {}",
        outcome.records.len(),
        outcome.resumed,
        outcome.failures.len(),
        out.display()
    );
    if outcome.records.is_empty() && !outcome.failures.is_empty() {
        return Err(Failure::AllRunsFailed(outcome.failures.len()));
    }
    Ok(())
}

fn truth(objective: &str, grid: usize, reps: usize, seed: u64, out: &Path) -> Result<(), Failure> {
    let f = benchmarks::by_name(objective)?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let t = benchmarks::build_ground_truth(&f, grid, reps, seed)?;
    let path = out.join("truth.json");
    t.save(&path)?;
    let h = t.model.hyper();
    println!(
        "{}: {} evaluations, fitted on {}, lengthscales {:?}, signal sd {}, noise sd {} -> {}",
        t.objective,
        t.total_evaluations,
        t.model.dataset().len(),
        h.log_lengthscales.iter().map(|v| v.exp()).collect::<Vec<_>>(),
        h.log_signal_sd.exp(),
        h.log_noise_sd.exp(),
        path.display()
    );
    Ok(())
}

fn report(dir: &Path) -> Result<(), Failure> {
    let plan = ExperimentPlan::load(&dir.join("plan.json"))?;
    let records = harness::read_records(&dir.join("records.csv"))?;
    harness::export(dir, &plan, &records)?;
    for c in harness::summarize(&records) {
        let sd = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.4}"));
        println!(
            "{:>3} rs{:<2} ms{:<2} n={:<3} x_err {:.4} ± {}  rmse {:.4}  nlpd {:.4}  early {:.2}  sd ratio {}",
            c.acquisition,
            c.rs,
            c.ms,
            c.runs,
            c.x_err_mean,
            sd(c.x_err_sd),
            c.rmse_mean_mean,
            c.nlpd_mean,
            c.early_termination_rate,
            sd(c.x_err_sd_ratio_vs_ss)
        );
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { plan, out, parallelism } => run(&plan, &out, parallelism),
        Command::Truth { objective, grid, reps, seed, out } => truth(&objective, grid, reps, seed, &out),
        Command::Report { input } => report(&input),
        Command::Single { objective, acq, rs, ms, budget, n_seed, seed } => {
            single(&objective, &acq, rs, ms, budget, n_seed, seed)
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Core(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
        Err(Failure::AllRunsFailed(n)) => {
            eprintln!("error: all {n} runs failed");
            ExitCode::from(EXIT_ALL_FAILED)
        }
    }
}

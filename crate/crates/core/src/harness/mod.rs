//! Experiment grids over acquisitions × RS × MS × repeats: execution,
//! crash-safe persistence, per-cell summaries and plot-ready exports.
//!
//! A plan directory holds `plan.json`, `records.csv` (appended as runs
//! finish, rewritten in plan order at the end), `failures.csv`, `summary.csv`,
//! `truth.json`, `surfaces/` and `plotdata/`.

mod export;
pub mod stats;
mod summary;

pub use export::{export, read_failures, read_records, write_failures, write_records, RecordWriter};
pub use summary::{summarize, CellSummary};

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::acquisition::AcquisitionKind;
use crate::benchmarks::{self, FidelityReport, GroundTruthModel, SyntheticObjective, TruthSurface};
use crate::error::{Error, Result};
use crate::optimizer::{self, HrmsConfig, Objective, RunResult};
use crate::rng::hash_words;

/// Holdout draws per run for the fidelity nlpd.
pub const HOLDOUT_DRAWS: usize = 500;
/// Ground-truth sampling used when a plan directory has no `truth.json`.
pub const DEFAULT_TRUTH_GRID: usize = 21;
pub const DEFAULT_TRUTH_REPS: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentPlan {
    pub objective: String,
    pub acquisitions: Vec<AcquisitionKind>,
    pub rs_levels: Vec<usize>,
    pub ms_levels: Vec<usize>,
    pub repeats: usize,
    pub budget_evals: usize,
    pub budget_wall_ms: Option<u64>,
    pub base_seed: u64,
    pub n_seed: usize,
}

impl Default for ExperimentPlan {
    fn default() -> Self {
        ExperimentPlan {
            objective: "volatile-ttk".into(),
            acquisitions: AcquisitionKind::ALL.to_vec(),
            rs_levels: vec![1, 3, 5, 10],
            ms_levels: vec![1, 3, 5],
            repeats: 4,
            budget_evals: 500,
            budget_wall_ms: None,
            base_seed: 0,
            n_seed: 20,
        }
    }
}

/// One planned run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RunSpec {
    pub acquisition: AcquisitionKind,
    pub rs: usize,
    pub ms: usize,
    pub repeat_index: usize,
    pub seed: u64,
}

impl RunSpec {
    pub fn run_id(&self) -> String {
        format!("{}-rs{}-ms{}-r{}", self.acquisition, self.rs, self.ms, self.repeat_index)
    }
}

/// Run seed from the base seed and the run's cell and repeat. The
/// acquisition enters by its fixed code, not its position in the plan.
pub fn derive_seed(base_seed: u64, acquisition: AcquisitionKind, rs: usize, ms: usize, repeat_index: usize) -> u64 {
    let code = AcquisitionKind::ALL.iter().position(|k| *k == acquisition).unwrap_or(0) as u64;
    hash_words(&[base_seed, code, rs as u64, ms as u64, repeat_index as u64])
}

impl ExperimentPlan {
    pub fn validate(&self) -> Result<()> {
        benchmarks::by_name(&self.objective)?;
        let nonempty = |name: &str, len: usize| {
            if len == 0 {
                Err(Error::Config(format!("{name} must not be empty")))
            } else {
                Ok(())
            }
        };
        nonempty("acquisitions", self.acquisitions.len())?;
        nonempty("rs_levels", self.rs_levels.len())?;
        nonempty("ms_levels", self.ms_levels.len())?;
        if self.rs_levels.iter().chain(&self.ms_levels).any(|&v| v == 0) {
            return Err(Error::Config("rs and ms levels must be at least 1".into()));
        }
        let distinct = |v: &[usize]| v.iter().collect::<HashSet<_>>().len() == v.len();
        if !distinct(&self.rs_levels) || !distinct(&self.ms_levels) {
            return Err(Error::Config("rs and ms levels must be distinct".into()));
        }
        if self.acquisitions.iter().collect::<HashSet<_>>().len() != self.acquisitions.len() {
            return Err(Error::Config("acquisitions must be distinct".into()));
        }
        if self.repeats == 0 {
            return Err(Error::Config("repeats must be at least 1".into()));
        }
        if self.n_seed < 2 {
            return Err(Error::Config("n_seed must be at least 2".into()));
        }
        Ok(())
    }

    /// Every run, in plan order: acquisition, rs, ms, then repeat.
    pub fn runs(&self) -> Vec<RunSpec> {
        let mut out = Vec::new();
        for &acquisition in &self.acquisitions {
            for &rs in &self.rs_levels {
                for &ms in &self.ms_levels {
                    for repeat_index in 0..self.repeats {
                        let seed = derive_seed(self.base_seed, acquisition, rs, ms, repeat_index);
                        out.push(RunSpec { acquisition, rs, ms, repeat_index, seed });
                    }
                }
            }
        }
        out
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let plan: ExperimentPlan =
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        plan.validate()?;
        Ok(plan)
    }

    pub fn config_for(&self, spec: &RunSpec, bounds: crate::space::Bounds) -> HrmsConfig {
        let mut config = HrmsConfig::new(spec.acquisition, spec.rs, spec.ms, bounds, spec.seed);
        config.budget_evals = self.budget_evals;
        config.budget_wall_ms = self.budget_wall_ms;
        config.n_seed = self.n_seed;
        config
    }

    /// The (rs, ms) cell whose surfaces are exported next to SS: RS3/MS3 when
    /// planned, otherwise the cell with the most evaluations per iteration.
    pub fn showcase_cell(&self) -> (usize, usize) {
        if self.rs_levels.contains(&3) && self.ms_levels.contains(&3) {
            return (3, 3);
        }
        let mut best = (self.rs_levels[0], self.ms_levels[0]);
        for &rs in &self.rs_levels {
            for &ms in &self.ms_levels {
                if (rs * ms, rs) > (best.0 * best.1, best.0) {
                    best = (rs, ms);
                }
            }
        }
        best
    }

    /// Whether a run's final surrogate surface is kept for the fidelity plot.
    pub fn surface_selected(&self, spec: &RunSpec) -> bool {
        spec.repeat_index == 0 && ((spec.rs, spec.ms) == (1, 1) || (spec.rs, spec.ms) == self.showcase_cell())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub run_id: String,
    pub acquisition: AcquisitionKind,
    pub rs: usize,
    pub ms: usize,
    pub repeat_index: usize,
    pub seed: u64,
    pub x_hat: Vec<f64>,
    pub y_hat: f64,
    /// Euclidean distance from `x_hat` to the objective's true minimizer.
    pub x_err: f64,
    /// `|y_hat − true_min_y|`.
    pub y_err: f64,
    pub evals_used: usize,
    pub iters: usize,
    pub terminated_early: bool,
    pub termination_reason: String,
    pub fidelity: FidelityReport,
    pub wall_ms: f64,
}

impl ExperimentRecord {
    pub fn is_finite(&self) -> bool {
        self.x_hat.iter().all(|v| v.is_finite())
            && [self.y_hat, self.x_err, self.y_err, self.fidelity.rmse_mean, self.fidelity.rmse_sd, self.fidelity.nlpd]
                .iter()
                .all(|v| v.is_finite())
    }
}

/// A run that produced no record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunFailure {
    pub run_id: String,
    pub acquisition: AcquisitionKind,
    pub rs: usize,
    pub ms: usize,
    pub repeat_index: usize,
    pub seed: u64,
    pub error: String,
}

impl RunFailure {
    fn new(spec: &RunSpec, error: &Error) -> Self {
        RunFailure {
            run_id: spec.run_id(),
            acquisition: spec.acquisition,
            rs: spec.rs,
            ms: spec.ms,
            repeat_index: spec.repeat_index,
            seed: spec.seed,
            error: error.to_string(),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct GridOutcome {
    /// Completed runs in plan order.
    pub records: Vec<ExperimentRecord>,
    pub failures: Vec<RunFailure>,
    /// Records found on disk from an earlier, interrupted invocation.
    pub resumed: usize,
}

/// Runs one planned configuration and scores its final surrogate.
pub fn run_one(
    plan: &ExperimentPlan,
    spec: &RunSpec,
    objective: &SyntheticObjective,
    truth: &GroundTruthModel,
) -> Result<(ExperimentRecord, RunResult)> {
    let started = Instant::now();
    let config = plan.config_for(spec, objective.bounds().clone());
    let result = optimizer::run(&config, objective)?;
    let fidelity = benchmarks::fidelity(&result.final_model, truth, objective, HOLDOUT_DRAWS, spec.seed)?;
    let record = ExperimentRecord {
        run_id: spec.run_id(),
        acquisition: spec.acquisition,
        rs: spec.rs,
        ms: spec.ms,
        repeat_index: spec.repeat_index,
        seed: spec.seed,
        x_hat: result.x_hat.coords().to_vec(),
        y_hat: result.y_hat,
        x_err: result.x_hat.distance(objective.true_min_x()),
        y_err: (result.y_hat - objective.true_min_y()).abs(),
        evals_used: result.evals_used,
        iters: result.iters,
        terminated_early: result.terminated_early,
        termination_reason: result.termination_reason.as_str().to_string(),
        fidelity,
        wall_ms: started.elapsed().as_secs_f64() * 1e3,
    };
    if !record.is_finite() {
        return Err(Error::Evaluation(format!("run {} produced non-finite results", record.run_id)));
    }
    Ok((record, result))
}

/// Seed for the default ground truth of a plan.
pub fn truth_seed(base_seed: u64) -> u64 {
    hash_words(&[base_seed, 0x7472_7574_68])
}

/// Loads `dir/truth.json` when it matches the objective, otherwise builds
/// the default ground truth and caches it there.
pub fn load_or_build_truth(dir: &Path, objective: &SyntheticObjective, base_seed: u64) -> Result<GroundTruthModel> {
    let path = dir.join("truth.json");
    if path.exists() {
        let truth = GroundTruthModel::load(&path)?;
        if truth.objective == objective.name() {
            return Ok(truth);
        }
        log::warn!("{} is for objective {}; rebuilding", path.display(), truth.objective);
    }
    let truth = benchmarks::build_ground_truth(objective, DEFAULT_TRUTH_GRID, DEFAULT_TRUTH_REPS, truth_seed(base_seed))?;
    truth.save(&path)?;
    Ok(truth)
}

pub fn surface_path(dir: &Path, run_id: &str) -> PathBuf {
    dir.join("surfaces").join(format!("{run_id}.json"))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Checks `dir/plan.json` against `plan`, writing it when absent.
fn echo_plan(dir: &Path, plan: &ExperimentPlan) -> Result<()> {
    let path = dir.join("plan.json");
    if path.exists() {
        let existing = ExperimentPlan::load(&path)?;
        if &existing != plan {
            return Err(Error::Config(format!("{} holds a different plan; use a fresh directory", path.display())));
        }
        return Ok(());
    }
    let text = serde_json::to_string_pretty(plan).map_err(|e| Error::data(&path, e))?;
    fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
}

/// Executes every planned run not already recorded in `dir`, on a pool of
/// `parallelism` threads, then writes the final record set, failures,
/// summary and plot data.
pub fn run_grid(plan: &ExperimentPlan, dir: &Path, parallelism: usize) -> Result<GridOutcome> {
    plan.validate()?;
    create_dir(dir)?;
    create_dir(&dir.join("surfaces"))?;
    echo_plan(dir, plan)?;
    let objective = benchmarks::by_name(&plan.objective)?;
    let truth = load_or_build_truth(dir, &objective, plan.base_seed)?;

    let runs = plan.runs();
    let records_path = dir.join("records.csv");
    let dim = objective.bounds().dim();
    let planned: HashSet<String> = runs.iter().map(RunSpec::run_id).collect();
    let mut previous = if records_path.exists() { read_records(&records_path)? } else { Vec::new() };
    previous.retain(|r| planned.contains(&r.run_id));
    // Rewrite without any torn trailing line before appending.
    write_records(&records_path, &previous, dim)?;
    let done: HashSet<String> = previous.iter().map(|r| r.run_id.clone()).collect();
    let resumed = previous.len();

    let pending: Vec<RunSpec> = runs.iter().filter(|s| !done.contains(&s.run_id())).copied().collect();
    let writer = Mutex::new(RecordWriter::append(&records_path, dim)?);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism.max(1))
        .build()
        .map_err(|e| Error::Config(format!("cannot build thread pool: {e}")))?;
    let outcomes: Vec<std::result::Result<ExperimentRecord, RunFailure>> = pool.install(|| {
        pending
            .par_iter()
            .map(|spec| {
                let outcome = run_one(plan, spec, &objective, &truth).and_then(|(record, result)| {
                    if plan.surface_selected(spec) {
                        let surface = TruthSurface::of_model(&result.final_model)?;
                        let path = surface_path(dir, &record.run_id);
                        let text = serde_json::to_string(&surface).map_err(|e| Error::data(&path, e))?;
                        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
                    }
                    writer.lock().expect("record writer poisoned").write(&record)?;
                    Ok(record)
                });
                outcome.map_err(|e| {
                    log::warn!("run {} failed: {e}", spec.run_id());
                    RunFailure::new(spec, &e)
                })
            })
            .collect()
    });
    drop(writer);

    let mut records = previous;
    let mut failures = Vec::new();
    for o in outcomes {
        match o {
            Ok(r) => records.push(r),
            Err(f) => failures.push(f),
        }
    }
    let order: std::collections::HashMap<String, usize> =
        runs.iter().enumerate().map(|(i, s)| (s.run_id(), i)).collect();
    records.sort_by_key(|r| order[&r.run_id]);
    failures.sort_by_key(|f| order[&f.run_id]);
    write_records(&records_path, &records, dim)?;
    write_failures(&dir.join("failures.csv"), &failures)?;
    if !records.is_empty() {
        export(dir, plan, &records)?;
    }
    Ok(GridOutcome { records, failures, resumed })
}

//! The HRMS optimization loop.
//!
//! A run evaluates `n_seed` uniformly random seed points once each, then
//! iterates: refit the hyperparameters by MAP, propose `ms` distinct
//! locations, evaluate each of them `rs` times, append the results and refit
//! the GP at the current hyperparameters. The loop stops after the first
//! iteration that brings the evaluation count to the budget, when the wall
//! clock runs out, or when the covariance becomes ill-conditioned.
//!
//! The surrogate works on inputs mapped to the unit box and on targets
//! standardized to zero mean and unit sd; the dataset and the recommendation
//! are kept in the objective's own coordinates and units.

use std::fmt;
use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::acquisition::{self, inner, AcquisitionKind, BatchProposal, ProposalSettings};
use crate::error::{check_dim, Error, Result};
use crate::gp::{map_fit_with, Dataset, GpModel, HyperPriors, Hyperparameters, JitterPolicy, MapOptions, TargetScaling};
use crate::lowdisc;
use crate::rng::{hash_words, label, SeedStream};
use crate::space::{Bounds, InputPoint};

/// Identifies one objective evaluation. Objectives derive their randomness
/// from this key alone, so results do not depend on evaluation order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EvalKey {
    pub run_seed: u64,
    /// 0 for the seed design, then the 1-based iteration.
    pub iter: u64,
    pub location: u64,
    pub repeat: u64,
    pub attempt: u64,
}

impl EvalKey {
    pub fn stream(&self) -> SeedStream {
        SeedStream::new(hash_words(&[self.run_seed, self.iter, self.location, self.repeat, self.attempt]))
    }
}

/// The evaluation interface between the optimizer and a black-box function.
/// A simulator-backed objective would implement this trait.
pub trait Objective: Sync {
    fn bounds(&self) -> &Bounds;

    fn dim(&self) -> usize {
        self.bounds().dim()
    }

    fn evaluate(&self, x: &InputPoint, key: &EvalKey) -> Result<f64>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct HrmsConfig {
    pub kind: AcquisitionKind,
    /// Repeats per location.
    pub rs: usize,
    /// Distinct locations per iteration.
    pub ms: usize,
    pub n_seed: usize,
    pub budget_evals: usize,
    pub budget_wall_ms: Option<u64>,
    pub bounds: Bounds,
    pub seed: u64,
    /// Refit hyperparameters every this many iterations.
    pub refit_every: usize,
    pub priors: HyperPriors,
    /// Options for the initial fit; in-loop refits use `refit_restarts`.
    pub map: MapOptions,
    /// Fresh starts per in-loop refit besides the warm start from the previous
    /// MAP estimate (prior mode, then draws); 0 refines the warm start alone.
    pub refit_restarts: usize,
    pub policy: JitterPolicy,
    pub proposal: ProposalSettings,
}

impl HrmsConfig {
    pub fn new(kind: AcquisitionKind, rs: usize, ms: usize, bounds: Bounds, seed: u64) -> Self {
        HrmsConfig {
            kind,
            rs,
            ms,
            n_seed: 20,
            budget_evals: 500,
            budget_wall_ms: None,
            bounds,
            seed,
            refit_every: 1,
            priors: HyperPriors::default(),
            map: MapOptions::default(),
            refit_restarts: 0,
            policy: JitterPolicy::default(),
            proposal: ProposalSettings::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.rs == 0 || self.ms == 0 {
            return Err(Error::Config("rs and ms must be at least 1".into()));
        }
        if self.n_seed < 2 {
            return Err(Error::Config("need at least two seed points".into()));
        }
        if self.refit_every == 0 {
            return Err(Error::Config("refit_every must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminationReason {
    Budget,
    WallClock,
    /// The covariance could not be factorized at `iter` even with `jitter`.
    IllConditioned { iter: usize, jitter: f64 },
}

impl TerminationReason {
    pub fn as_str(&self) -> &'static str {
        match self {
            TerminationReason::Budget => "budget",
            TerminationReason::WallClock => "wall_clock",
            TerminationReason::IllConditioned { .. } => "ill_conditioned",
        }
    }

    pub fn is_early(&self) -> bool {
        !matches!(self, TerminationReason::Budget)
    }
}

impl fmt::Display for TerminationReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub iter: usize,
    pub proposal: BatchProposal,
    /// Hyperparameters used for the proposal.
    pub hyper: Hyperparameters,
    pub evaluated: usize,
    pub missing: usize,
    pub fit_ms: f64,
    pub propose_ms: f64,
    pub eval_ms: f64,
}

#[derive(Debug, Clone)]
pub struct OptimizationState {
    /// Observations in objective coordinates and units.
    pub dataset: Dataset,
    /// Surrogate over unit-box inputs and standardized targets.
    pub model: GpModel,
    pub iter: usize,
    pub evals_used: usize,
    pub missing: usize,
    pub terminated: Option<TerminationReason>,
    pub trace: Vec<IterationRecord>,
    run_seed: SeedStream,
    started: Instant,
}

impl OptimizationState {
    pub fn run_seed(&self) -> SeedStream {
        self.run_seed
    }
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub x_hat: InputPoint,
    pub y_hat: f64,
    pub evals_used: usize,
    pub missing: usize,
    pub iters: usize,
    pub terminated_early: bool,
    pub termination_reason: TerminationReason,
    /// Last valid surrogate (unit-box inputs).
    pub final_model: GpModel,
    pub trace: Vec<IterationRecord>,
}

/// `n` points drawn uniformly from `bounds`.
pub fn seed_design<R: Rng + ?Sized>(bounds: &Bounds, n: usize, rng: &mut R) -> Vec<InputPoint> {
    (0..n)
        .map(|_| {
            let u: Vec<f64> = (0..bounds.dim()).map(|_| rng.gen::<f64>()).collect();
            bounds.map_unit(&u)
        })
        .collect()
}

/// Each location repeated `rs` times, grouped by location.
pub fn expand_repeats(proposal: &BatchProposal, rs: usize) -> Vec<InputPoint> {
    proposal
        .locations
        .iter()
        .flat_map(|x| std::iter::repeat(x.clone()).take(rs))
        .collect()
}

/// Argmin of the posterior mean over a dense grid, refined locally.
/// `model` takes unit-box inputs; the result is in `bounds` coordinates and
/// `y_hat` is the model's predicted mean there.
pub fn recommend(model: &GpModel, bounds: &Bounds) -> Result<(InputPoint, f64)> {
    let (u, y) = recommend_unit(model, bounds.dim())?;
    Ok((bounds.map_unit(u.coords()), y))
}

fn recommend_unit(model: &GpModel, d: usize) -> Result<(InputPoint, f64)> {
    check_dim(model.dim(), d)?;
    let grid = lowdisc::dense_grid(d);
    let means = model.predict_means(&grid)?;
    let (idx, _) = means
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |(bi, bv), (i, &v)| if v < bv { (i, v) } else { (bi, bv) });
    let spacing = if d <= 2 { 1.0 / 200.0 } else { (grid.len() as f64).powf(-1.0 / d as f64) };
    let unit = Bounds::unit(d);
    let (x, _) = inner::refine_from(
        |xs| model.predict_means(xs).expect("dimension checked").into_iter().map(|m| -m).collect(),
        &unit,
        grid[idx].coords().to_vec(),
        -means[idx],
        2.0 * spacing,
        20,
    );
    let y = model.predict(std::slice::from_ref(&x), crate::gp::VarianceKind::Latent)?.means[0];
    Ok((x, y))
}

fn elapsed_ms(since: Instant) -> f64 {
    since.elapsed().as_secs_f64() * 1e3
}

fn unit_dataset(dataset: &Dataset, bounds: &Bounds) -> Result<Dataset> {
    let pts = dataset.points().iter().map(|p| bounds.to_unit(p)).collect::<Result<Vec<_>>>()?;
    Dataset::new(pts, dataset.targets().to_vec())
}

/// Evaluates with one retry; `None` records a missing evaluation.
fn evaluate_with_retry<O: Objective + ?Sized>(objective: &O, x: &InputPoint, key: EvalKey) -> Option<f64> {
    for attempt in 0..2 {
        let k = EvalKey { attempt, ..key };
        if let Ok(y) = objective.evaluate(x, &k) {
            if y.is_finite() {
                return Some(y);
            }
        }
    }
    None
}

/// MAP fit plus GP fit on the current data.
fn refit(
    dataset: &Dataset,
    config: &HrmsConfig,
    warm: Option<&Hyperparameters>,
    restarts: usize,
    rng_stream: SeedStream,
) -> Result<GpModel> {
    let unit = unit_dataset(dataset, &config.bounds)?;
    let scaling = TargetScaling::standardize(unit.targets());
    let options = MapOptions { restarts, policy: config.policy.clone(), ..config.map.clone() };
    let warm: Vec<Hyperparameters> = warm.into_iter().cloned().collect();
    let fit = map_fit_with(&unit, scaling, &config.priors, &warm, &options, &mut rng_stream.rng())?;
    GpModel::fit_scaled(&unit, &fit.hyper, &config.policy, scaling)
}

/// Evaluates the seed design and fits the initial model.
pub fn initialize<O: Objective + ?Sized>(config: &HrmsConfig, objective: &O) -> Result<OptimizationState> {
    config.validate()?;
    check_dim(config.bounds.dim(), objective.dim())?;
    let started = Instant::now();
    let run_seed = SeedStream::new(config.seed);
    let seeds = seed_design(&config.bounds, config.n_seed, &mut run_seed.derive(label::SEED_DESIGN).rng());
    let mut dataset = Dataset::default();
    let mut missing = 0;
    for (i, x) in seeds.iter().enumerate() {
        let key = EvalKey { run_seed: config.seed, iter: 0, location: i as u64, repeat: 0, attempt: 0 };
        match evaluate_with_retry(objective, x, key) {
            Some(y) => dataset.push(x.clone(), y)?,
            None => missing += 1,
        }
    }
    if dataset.len() < 2 {
        return Err(Error::Evaluation(format!("only {} of {} seed evaluations succeeded", dataset.len(), seeds.len())));
    }
    let stream = run_seed.derive_path(&[label::HYPER_FIT, 0]);
    let (model, terminated) = match refit(&dataset, config, None, config.map.restarts, stream) {
        Ok(m) => (m, None),
        Err(Error::IllConditioned { jitter }) => {
            // Keep a usable (prior-mode) surrogate for the recommendation.
            let unit = unit_dataset(&dataset, &config.bounds)?;
            let scaling = TargetScaling::standardize(unit.targets());
            let hyper = config.priors.mode(config.bounds.dim());
            let model = GpModel::fit_scaled(&unit, &hyper, &config.policy, scaling)
                .unwrap_or_else(|_| GpModel::prior(&hyper, scaling));
            (model, Some(TerminationReason::IllConditioned { iter: 0, jitter }))
        }
        Err(e) => return Err(e),
    };
    let evals_used = dataset.len();
    let mut state = OptimizationState {
        dataset,
        model,
        iter: 0,
        evals_used,
        missing,
        terminated,
        trace: Vec::new(),
        run_seed,
        started,
    };
    if state.terminated.is_none() {
        state.terminated = budget_exhausted(&state, config);
    }
    Ok(state)
}

fn budget_exhausted(state: &OptimizationState, config: &HrmsConfig) -> Option<TerminationReason> {
    if state.evals_used >= config.budget_evals {
        return Some(TerminationReason::Budget);
    }
    match config.budget_wall_ms {
        Some(ms) if state.started.elapsed().as_millis() >= u128::from(ms) => Some(TerminationReason::WallClock),
        _ => None,
    }
}

/// One HRMS iteration. A terminated state is returned unchanged.
pub fn step<O: Objective + ?Sized>(
    mut state: OptimizationState,
    config: &HrmsConfig,
    objective: &O,
) -> Result<OptimizationState> {
    if state.terminated.is_some() {
        return Ok(state);
    }
    let iter = state.iter + 1;
    let d = config.bounds.dim();
    let unit_box = Bounds::unit(d);

    let fit_start = Instant::now();
    if (iter - 1) % config.refit_every == 0 {
        let stream = state.run_seed.derive_path(&[label::HYPER_FIT, iter as u64]);
        let warm = state.model.hyper().clone();
        match refit(&state.dataset, config, Some(&warm), config.refit_restarts, stream) {
            Ok(model) => state.model = model,
            Err(Error::IllConditioned { jitter }) => {
                state.terminated = Some(TerminationReason::IllConditioned { iter, jitter });
                return Ok(state);
            }
            Err(e) => return Err(e),
        }
    }
    let fit_ms = elapsed_ms(fit_start);

    let propose_start = Instant::now();
    let incumbent = incumbent(&state.model)?;
    let mut rng = state.run_seed.derive_path(&[label::PROPOSAL, iter as u64]).rng();
    let proposal = match acquisition::propose_batch_with(
        &state.model,
        config.kind,
        &unit_box,
        incumbent,
        config.ms,
        iter,
        &config.proposal,
        &mut rng,
    ) {
        Ok(p) => p,
        Err(Error::IllConditioned { jitter }) => {
            state.terminated = Some(TerminationReason::IllConditioned { iter, jitter });
            return Ok(state);
        }
        Err(e) => return Err(e),
    };
    let propose_ms = elapsed_ms(propose_start);

    let eval_start = Instant::now();
    let mut new_points = Vec::new();
    let mut new_targets = Vec::new();
    let mut missing = 0;
    for (loc, u) in proposal.locations.iter().enumerate() {
        let x = config.bounds.map_unit(u.coords());
        for rep in 0..config.rs {
            let key = EvalKey { run_seed: config.seed, iter: iter as u64, location: loc as u64, repeat: rep as u64, attempt: 0 };
            match evaluate_with_retry(objective, &x, key) {
                Some(y) => {
                    new_points.push(x.clone());
                    new_targets.push(y);
                }
                None => missing += 1,
            }
        }
    }
    let eval_ms = elapsed_ms(eval_start);

    for (x, y) in new_points.iter().zip(&new_targets) {
        state.dataset.push(x.clone(), *y)?;
    }
    state.evals_used += new_points.len();
    state.missing += missing;
    state.iter = iter;
    state.trace.push(IterationRecord {
        iter,
        proposal,
        hyper: state.model.hyper().clone(),
        evaluated: new_points.len(),
        missing,
        fit_ms,
        propose_ms,
        eval_ms,
    });

    // Refit at the current hyperparameters and target scaling.
    let unit = unit_dataset(&state.dataset, &config.bounds)?;
    match GpModel::fit_scaled(&unit, state.model.hyper(), &config.policy, state.model.scaling()) {
        Ok(model) => state.model = model,
        Err(Error::IllConditioned { jitter }) => {
            state.terminated = Some(TerminationReason::IllConditioned { iter, jitter });
            return Ok(state);
        }
        Err(e) => return Err(e),
    }
    state.terminated = budget_exhausted(&state, config);
    Ok(state)
}

/// Lowest posterior mean over the observed locations. Under heavy noise this
/// is steadier than the best raw observation, which a single lucky draw
/// would set.
fn incumbent(model: &GpModel) -> Result<f64> {
    let means = model.predict_means(model.dataset().points())?;
    Ok(means.into_iter().fold(f64::INFINITY, f64::min))
}

/// Seeds, iterates to termination and recommends.
pub fn run<O: Objective + ?Sized>(config: &HrmsConfig, objective: &O) -> Result<RunResult> {
    let mut state = initialize(config, objective)?;
    while state.terminated.is_none() {
        state = step(state, config, objective)?;
    }
    finish(state, config)
}

pub fn finish(state: OptimizationState, config: &HrmsConfig) -> Result<RunResult> {
    let reason = state.terminated.unwrap_or(TerminationReason::Budget);
    let (x_hat, y_hat) = recommend(&state.model, &config.bounds)?;
    Ok(RunResult {
        x_hat,
        y_hat,
        evals_used: state.evals_used,
        missing: state.missing,
        iters: state.iter,
        terminated_early: reason.is_early(),
        termination_reason: reason,
        final_model: state.model,
        trace: state.trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn expand_repeats_groups_by_location() {
        let p = BatchProposal {
            locations: vec![InputPoint::new(vec![0.1]).unwrap(), InputPoint::new(vec![0.7]).unwrap()],
            values: vec![1.0, 0.5],
            incomplete: false,
        };
        let r = expand_repeats(&p, 3);
        assert_eq!(r.len(), 6);
        assert!(r[..3].iter().all(|x| x[0] == 0.1));
        assert!(r[3..].iter().all(|x| x[0] == 0.7));
    }

    #[test]
    fn eval_keys_differ_per_field() {
        let k = EvalKey { run_seed: 1, iter: 2, location: 3, repeat: 4, attempt: 0 };
        let streams = [
            k.stream(),
            EvalKey { iter: 3, ..k }.stream(),
            EvalKey { location: 4, ..k }.stream(),
            EvalKey { repeat: 5, ..k }.stream(),
            EvalKey { attempt: 1, ..k }.stream(),
        ];
        for i in 0..streams.len() {
            for j in i + 1..streams.len() {
                assert_ne!(streams[i], streams[j]);
            }
        }
    }
}

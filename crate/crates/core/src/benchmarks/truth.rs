use std::fs;
use std::path::Path;

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use super::SyntheticObjective;
use crate::error::{Error, Result};
use crate::gp::{map_fit_with, Dataset, GpModel, HyperPriors, Hyperparameters, JitterPolicy, MapOptions, TargetScaling, VarianceKind};
use crate::lowdisc;
use crate::optimizer::{EvalKey, Objective};
use crate::rng::{label, SeedStream};
use crate::space::InputPoint;

/// Nodes per axis of the fidelity audit grid.
pub const FIDELITY_GRID: usize = 101;
/// Largest dataset the ground-truth GP is fitted on.
pub const TRUTH_FIT_CAP: usize = 4000;
/// Prediction batch size, bounding the cross-covariance memory.
const CHUNK: usize = 1024;

/// Audit points in the unit box: a 101-per-axis tensor grid up to d = 2,
/// otherwise the same number of scrambled Sobol points.
pub fn audit_grid(d: usize) -> Vec<InputPoint> {
    if d <= 2 {
        lowdisc::tensor_grid(FIDELITY_GRID, d)
    } else {
        lowdisc::sobol(FIDELITY_GRID * FIDELITY_GRID, d, 0xa0d17)
    }
}

/// Posterior mean and latent sd of a model over the audit grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthSurface {
    pub grid: Vec<InputPoint>,
    pub means: Vec<f64>,
    pub sds: Vec<f64>,
}

impl TruthSurface {
    pub fn of_model(model: &GpModel) -> Result<Self> {
        let grid = audit_grid(model.dim());
        let (means, sds) = predict_chunked(model, &grid, VarianceKind::Latent)?;
        Ok(TruthSurface { grid, means, sds })
    }
}

fn predict_chunked(model: &GpModel, xs: &[InputPoint], kind: VarianceKind) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut means = Vec::with_capacity(xs.len());
    let mut sds = Vec::with_capacity(xs.len());
    for chunk in xs.chunks(CHUNK) {
        let p = model.predict(chunk, kind)?;
        sds.extend(p.sds());
        means.extend(p.means);
    }
    Ok((means, sds))
}

/// A GP fitted to dense replicated samples of an objective.
#[derive(Debug, Clone)]
pub struct GroundTruthModel {
    pub objective: String,
    /// Fitted on unit-box inputs.
    pub model: GpModel,
    /// Sampling nodes in objective coordinates.
    pub grid: Vec<InputPoint>,
    pub samples_per_point: usize,
    pub total_evaluations: usize,
    pub seed: u64,
    pub surface: TruthSurface,
}

#[derive(Serialize, Deserialize)]
struct TruthFile {
    objective: String,
    grid_per_dim: usize,
    samples_per_point: usize,
    total_evaluations: usize,
    seed: u64,
    hyper: Hyperparameters,
    scaling: TargetScaling,
    policy: JitterPolicy,
    fit_data: Dataset,
    surface: TruthSurface,
}

impl GroundTruthModel {
    pub fn grid_per_dim(&self) -> usize {
        let d = self.model.dim() as f64;
        (self.grid.len() as f64).powf(1.0 / d).round() as usize
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = TruthFile {
            objective: self.objective.clone(),
            grid_per_dim: self.grid_per_dim(),
            samples_per_point: self.samples_per_point,
            total_evaluations: self.total_evaluations,
            seed: self.seed,
            hyper: self.model.hyper().clone(),
            scaling: self.model.scaling(),
            policy: self.model.policy().clone(),
            fit_data: self.model.dataset().clone(),
            surface: self.surface.clone(),
        };
        let text = serde_json::to_string(&file).map_err(|e| Error::data(path, e))?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    /// Reloads a saved model; the GP is refactorized from the stored data.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: TruthFile = serde_json::from_str(&text).map_err(|e| Error::data(path, e))?;
        let model = GpModel::fit_scaled(&file.fit_data, &file.hyper, &file.policy, file.scaling)?;
        let objective = super::by_name(&file.objective)?;
        let grid = sampling_nodes(&objective, file.grid_per_dim);
        Ok(GroundTruthModel {
            objective: file.objective,
            model,
            grid,
            samples_per_point: file.samples_per_point,
            total_evaluations: file.total_evaluations,
            seed: file.seed,
            surface: file.surface,
        })
    }
}

/// Reads only the cached audit surface from a saved ground truth.
pub fn load_surface(path: &Path) -> Result<TruthSurface> {
    #[derive(Deserialize)]
    struct SurfaceOnly {
        surface: TruthSurface,
    }
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: SurfaceOnly = serde_json::from_str(&text).map_err(|e| Error::data(path, e))?;
    Ok(file.surface)
}

fn sampling_nodes(objective: &SyntheticObjective, grid_per_dim: usize) -> Vec<InputPoint> {
    let bounds = objective.bounds();
    lowdisc::tensor_grid(grid_per_dim, bounds.dim())
        .iter()
        .map(|u| bounds.map_unit(u.coords()))
        .collect()
}

/// Evaluates the objective `reps` times at every node of a tensor grid and
/// fits a GP by MAP. Above [`TRUTH_FIT_CAP`] samples a uniform subsample is
/// used for fitting.
pub fn build_ground_truth(
    objective: &SyntheticObjective,
    grid_per_dim: usize,
    reps: usize,
    seed: u64,
) -> Result<GroundTruthModel> {
    if grid_per_dim < 2 || reps == 0 {
        return Err(Error::InvalidInput("ground truth needs at least 2 nodes per axis and 1 repeat".into()));
    }
    let stream = SeedStream::new(seed);
    let eval_seed = stream.derive(label::EVALUATION).seed();
    let bounds = objective.bounds();
    let nodes = sampling_nodes(objective, grid_per_dim);
    let mut points = Vec::with_capacity(nodes.len() * reps);
    let mut targets = Vec::with_capacity(nodes.len() * reps);
    for (i, x) in nodes.iter().enumerate() {
        for r in 0..reps {
            let key = EvalKey { run_seed: eval_seed, iter: 0, location: i as u64, repeat: r as u64, attempt: 0 };
            points.push(bounds.to_unit(x)?);
            targets.push(objective.evaluate(x, &key)?);
        }
    }
    let total = points.len();
    if total > TRUTH_FIT_CAP {
        let mut rng = stream.derive(label::SEED_DESIGN).rng();
        let mut keep = sample(&mut rng, total, TRUTH_FIT_CAP).into_vec();
        keep.sort_unstable();
        points = keep.iter().map(|&i| points[i].clone()).collect();
        targets = keep.iter().map(|&i| targets[i]).collect();
    }
    let data = Dataset::new(points, targets)?;
    let model = match fit_truth(&data, &stream) {
        Err(Error::IllConditioned { jitter }) => {
            // Replicates of a (nearly) noiseless objective cannot be factorized;
            // their node means carry the same information.
            log::warn!("{}: replicated truth data ill-conditioned at jitter {jitter:e}; fitting node means", objective.name());
            fit_truth(&node_means(&data)?, &stream)?
        }
        other => other?,
    };
    let surface = TruthSurface::of_model(&model)?;
    Ok(GroundTruthModel {
        objective: objective.name().to_string(),
        model,
        grid: nodes,
        samples_per_point: reps,
        total_evaluations: total,
        seed,
        surface,
    })
}

fn fit_truth(data: &Dataset, stream: &SeedStream) -> Result<GpModel> {
    let scaling = TargetScaling::standardize(data.targets());
    let options = MapOptions::default();
    let fit = map_fit_with(data, scaling, &HyperPriors::default(), &[], &options, &mut stream.derive(label::HYPER_FIT).rng())?;
    GpModel::fit_scaled(data, &fit.hyper, &options.policy, scaling)
}

/// One point per distinct location holding the mean of its targets, in
/// first-appearance order.
fn node_means(data: &Dataset) -> Result<Dataset> {
    let mut points: Vec<InputPoint> = Vec::new();
    let mut sums: Vec<(f64, usize)> = Vec::new();
    for (x, y) in data.points().iter().zip(data.targets()) {
        match points.iter().position(|p| p == x) {
            Some(i) => {
                sums[i].0 += y;
                sums[i].1 += 1;
            }
            None => {
                points.push(x.clone());
                sums.push((*y, 1));
            }
        }
    }
    Dataset::new(points, sums.iter().map(|(s, n)| s / *n as f64).collect())
}

/// How closely a candidate surrogate matches the ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FidelityReport {
    /// RMSE between posterior means over the audit grid, objective units.
    pub rmse_mean: f64,
    /// RMSE between latent posterior sds over the audit grid.
    pub rmse_sd: f64,
    /// Mean negative log predictive density of fresh noisy draws, using the
    /// candidate's noise-inclusive predictive variance.
    pub nlpd: f64,
}

/// Sum of values in ascending order, so the result does not depend on the
/// order the values were produced in.
fn ordered_sum(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v.iter().sum()
}

/// Compares `candidate` (unit-box inputs) against `truth` on the audit grid
/// and scores it on `holdout_n` fresh draws at uniform random locations.
pub fn fidelity(
    candidate: &GpModel,
    truth: &GroundTruthModel,
    objective: &SyntheticObjective,
    holdout_n: usize,
    seed: u64,
) -> Result<FidelityReport> {
    let surface = &truth.surface;
    let (means, sds) = predict_chunked(candidate, &surface.grid, VarianceKind::Latent)?;
    let m = surface.grid.len() as f64;
    let sq_mean: Vec<f64> = means.iter().zip(&surface.means).map(|(a, b)| (a - b).powi(2)).collect();
    let sq_sd: Vec<f64> = sds.iter().zip(&surface.sds).map(|(a, b)| (a - b).powi(2)).collect();
    let rmse_mean = (ordered_sum(sq_mean) / m).sqrt();
    let rmse_sd = (ordered_sum(sq_sd) / m).sqrt();

    let nlpd = if holdout_n == 0 {
        f64::NAN
    } else {
        let stream = SeedStream::new(seed).derive(label::HOLDOUT);
        let bounds = objective.bounds();
        let unit = crate::optimizer::seed_design(&crate::space::Bounds::unit(bounds.dim()), holdout_n, &mut stream.rng());
        let eval_seed = stream.derive(label::EVALUATION).seed();
        let mut ys = Vec::with_capacity(holdout_n);
        for (i, u) in unit.iter().enumerate() {
            let key = EvalKey { run_seed: eval_seed, iter: 0, location: i as u64, repeat: 0, attempt: 0 };
            ys.push(objective.evaluate(&bounds.map_unit(u.coords()), &key)?);
        }
        let (pm, psd) = predict_chunked(candidate, &unit, VarianceKind::Predictive)?;
        let terms: Vec<f64> = pm
            .iter()
            .zip(&psd)
            .zip(&ys)
            .map(|((mu, sd), y)| {
                let v = (sd * sd).max(f64::MIN_POSITIVE);
                0.5 * (2.0 * std::f64::consts::PI * v).ln() + (y - mu).powi(2) / (2.0 * v)
            })
            .collect();
        ordered_sum(terms) / holdout_n as f64
    };
    Ok(FidelityReport { rmse_mean, rmse_sd, nlpd })
}

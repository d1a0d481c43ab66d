//! Maximum a posteriori hyperparameter fitting.
//!
//! The objective is the log marginal likelihood plus independent normal log
//! priors on the log-parameters. Each start is climbed with a limited-memory
//! quasi-Newton direction and a backtracking (Armijo) line search inside a
//! box on the log-parameters; the best start wins.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::lml::{Problem, State};
use super::{Dataset, Hyperparameters, JitterPolicy, TargetScaling};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalPrior {
    pub mean: f64,
    pub sd: f64,
}

impl NormalPrior {
    fn log_density(&self, x: f64) -> (f64, f64) {
        let z = (x - self.mean) / self.sd;
        (-0.5 * z * z - self.sd.ln() - 0.918_938_533_204_672_8, -z / self.sd)
    }
}

/// Priors on log ℓᵢ (shared by all dimensions), log σ_f and log σ_n, in
/// normalized input coordinates and standardized target units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HyperPriors {
    pub log_lengthscale: NormalPrior,
    pub log_signal_sd: NormalPrior,
    pub log_noise_sd: NormalPrior,
}

impl Default for HyperPriors {
    fn default() -> Self {
        HyperPriors {
            log_lengthscale: NormalPrior { mean: (0.2f64).ln(), sd: 1.0 },
            log_signal_sd: NormalPrior { mean: 0.0, sd: 1.0 },
            log_noise_sd: NormalPrior { mean: (0.3f64).ln(), sd: 1.0 },
        }
    }
}

impl HyperPriors {
    fn component(&self, d: usize, i: usize) -> &NormalPrior {
        if i < d {
            &self.log_lengthscale
        } else if i == d {
            &self.log_signal_sd
        } else {
            &self.log_noise_sd
        }
    }

    pub fn mode(&self, d: usize) -> Hyperparameters {
        Hyperparameters {
            log_lengthscales: vec![self.log_lengthscale.mean; d],
            log_signal_sd: self.log_signal_sd.mean,
            log_noise_sd: self.log_noise_sd.mean,
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, d: usize, rng: &mut R) -> Hyperparameters {
        let v: Vec<f64> = (0..d + 2)
            .map(|i| {
                let p = self.component(d, i);
                let z: f64 = rng.sample(StandardNormal);
                p.mean + p.sd * z
            })
            .collect();
        Hyperparameters { log_lengthscales: v[..d].to_vec(), log_signal_sd: v[d], log_noise_sd: v[d + 1] }
    }

    /// Log density and its gradient over the `[log ℓ, log σ_f, log σ_n]` layout.
    pub fn log_density(&self, hyper: &Hyperparameters) -> (f64, Vec<f64>) {
        let d = hyper.dim();
        let mut total = 0.0;
        let grad = hyper
            .to_vec()
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let (v, g) = self.component(d, i).log_density(x);
                total += v;
                g
            })
            .collect();
        (total, grad)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapOptions {
    /// Prior mode plus `restarts − 1` prior draws (on top of any warm starts).
    pub restarts: usize,
    pub max_iters: usize,
    pub grad_tol: f64,
    pub policy: JitterPolicy,
    /// Group exact duplicate inputs when evaluating the likelihood.
    pub replicated: bool,
    /// Box on log ℓ, log σ_f and log σ_n respectively.
    pub log_lengthscale_range: (f64, f64),
    pub log_signal_range: (f64, f64),
    pub log_noise_range: (f64, f64),
}

impl Default for MapOptions {
    fn default() -> Self {
        MapOptions {
            restarts: 5,
            max_iters: 200,
            grad_tol: 1e-5,
            policy: JitterPolicy::default(),
            replicated: true,
            log_lengthscale_range: ((1e-3f64).ln(), (1e2f64).ln()),
            log_signal_range: ((1e-3f64).ln(), (1e2f64).ln()),
            log_noise_range: ((1e-6f64).ln(), (1e1f64).ln()),
        }
    }
}

impl MapOptions {
    fn range(&self, d: usize, i: usize) -> (f64, f64) {
        if i < d {
            self.log_lengthscale_range
        } else if i == d {
            self.log_signal_range
        } else {
            self.log_noise_range
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MapFit {
    pub hyper: Hyperparameters,
    /// Log marginal likelihood plus log prior at `hyper`.
    pub objective: f64,
    pub converged: bool,
    pub starts: usize,
    pub failed_starts: usize,
    pub evaluations: usize,
}

/// MAP fit on raw targets with default options.
pub fn map_fit<R: Rng + ?Sized>(
    dataset: &Dataset,
    priors: &HyperPriors,
    restarts: usize,
    rng: &mut R,
) -> Result<Hyperparameters> {
    let options = MapOptions { restarts, ..MapOptions::default() };
    map_fit_with(dataset, TargetScaling::identity(), priors, &[], &options, rng).map(|f| f.hyper)
}

/// MAP fit with targets mapped through `scaling`. Warm starts are tried
/// first, then the prior mode and `restarts − 1` prior draws.
pub fn map_fit_with<R: Rng + ?Sized>(
    dataset: &Dataset,
    scaling: TargetScaling,
    priors: &HyperPriors,
    warm_starts: &[Hyperparameters],
    options: &MapOptions,
    rng: &mut R,
) -> Result<MapFit> {
    if dataset.len() < 2 {
        return Err(Error::InvalidInput("MAP fitting needs at least two observations".into()));
    }
    let d = dataset.dim().unwrap_or(0);
    let targets: Vec<f64> = dataset.targets().iter().map(|y| scaling.to_internal(*y)).collect();
    let problem = if options.replicated {
        Problem::replicated(dataset, &targets)?
    } else {
        Problem::direct(dataset, &targets)?
    };
    let objective = Objective { problem, priors, options, d };

    let mut starts: Vec<Vec<f64>> = warm_starts.iter().filter(|h| h.dim() == d).map(|h| h.to_vec()).collect();
    // With warm starts, `restarts = 0` means refining them alone.
    if options.restarts > 0 || starts.is_empty() {
        starts.push(priors.mode(d).to_vec());
    }
    for _ in 1..options.restarts {
        starts.push(priors.sample(d, rng).to_vec());
    }

    let mut best: Option<(f64, Vec<f64>, bool)> = None;
    let mut failed = 0;
    let mut evaluations = 0;
    let n_starts = starts.len();
    for start in starts {
        match objective.climb(start) {
            Some(outcome) => {
                evaluations += outcome.evaluations;
                if best.as_ref().map_or(true, |b| outcome.value > b.0) {
                    best = Some((outcome.value, outcome.x, outcome.converged));
                }
            }
            None => failed += 1,
        }
    }
    match best {
        Some((value, x, converged)) => Ok(MapFit {
            hyper: Hyperparameters::from_vec(d, &x)?,
            objective: value,
            converged,
            starts: n_starts,
            failed_starts: failed,
            evaluations,
        }),
        None => Ok(MapFit {
            hyper: priors.mode(d),
            objective: f64::NEG_INFINITY,
            converged: false,
            starts: n_starts,
            failed_starts: failed,
            evaluations,
        }),
    }
}

/// The MAP objective at `hyper`, evaluated the same way `map_fit_with` does.
#[cfg(test)]
pub(crate) fn map_objective(
    dataset: &Dataset,
    scaling: TargetScaling,
    priors: &HyperPriors,
    options: &MapOptions,
    hyper: &Hyperparameters,
) -> Result<f64> {
    let targets: Vec<f64> = dataset.targets().iter().map(|y| scaling.to_internal(*y)).collect();
    let problem = if options.replicated {
        Problem::replicated(dataset, &targets)?
    } else {
        Problem::direct(dataset, &targets)?
    };
    let state = problem.value(hyper, &options.policy)?;
    Ok(state.value + priors.log_density(hyper).0)
}

struct Objective<'a> {
    problem: Problem,
    priors: &'a HyperPriors,
    options: &'a MapOptions,
    d: usize,
}

struct ClimbOutcome {
    x: Vec<f64>,
    value: f64,
    converged: bool,
    evaluations: usize,
}

const MEMORY: usize = 8;
const ARMIJO: f64 = 1e-4;
const MAX_BACKTRACKS: usize = 40;

impl Objective<'_> {
    fn clamp(&self, x: &mut [f64]) {
        for (i, v) in x.iter_mut().enumerate() {
            let (lo, hi) = self.options.range(self.d, i);
            *v = v.clamp(lo, hi);
        }
    }

    fn value(&self, x: &[f64]) -> Option<(f64, State)> {
        let hyper = Hyperparameters::from_vec(self.d, x).ok()?;
        let state = self.problem.value(&hyper, &self.options.policy).ok()?;
        let v = state.value + self.priors.log_density(&hyper).0;
        v.is_finite().then_some((v, state))
    }

    /// Gradient of the MAP objective.
    fn gradient(&self, x: &[f64], state: &State) -> Vec<f64> {
        let hyper = Hyperparameters::from_vec(self.d, x).expect("validated in value()");
        let mut g = self.problem.gradient(state);
        for (gi, pi) in g.iter_mut().zip(self.priors.log_density(&hyper).1) {
            *gi += pi;
        }
        g
    }

    /// Gradient component zeroed where it pushes out of the box.
    fn projected(&self, x: &[f64], g: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(g)
            .enumerate()
            .map(|(i, (&xi, &gi))| {
                let (lo, hi) = self.options.range(self.d, i);
                if (xi <= lo && gi < 0.0) || (xi >= hi && gi > 0.0) {
                    0.0
                } else {
                    gi
                }
            })
            .collect()
    }

    /// Ascends from `start`; `None` if the start itself cannot be evaluated.
    fn climb(&self, mut x: Vec<f64>) -> Option<ClimbOutcome> {
        self.clamp(&mut x);
        let (mut f, state) = self.value(&x)?;
        let mut g = self.gradient(&x, &state);
        let mut evaluations = 1;
        let mut history: Vec<(Vec<f64>, Vec<f64>)> = Vec::new();
        let mut converged = false;

        for _ in 0..self.options.max_iters {
            let pg = self.projected(&x, &g);
            if pg.iter().fold(0.0f64, |m, v| m.max(v.abs())) < self.options.grad_tol {
                converged = true;
                break;
            }
            let mut dir = ascent_direction(&pg, &history);
            for (i, di) in dir.iter_mut().enumerate() {
                if pg[i] == 0.0 {
                    *di = 0.0;
                }
            }
            if dot(&dir, &pg) <= 0.0 {
                dir = pg.clone();
                history.clear();
            }
            let mut step = if history.is_empty() {
                1.0 / dir.iter().fold(1.0f64, |m, v| m.max(v.abs()))
            } else {
                1.0
            };

            let mut accepted = None;
            for _ in 0..MAX_BACKTRACKS {
                let mut trial: Vec<f64> = x.iter().zip(&dir).map(|(a, b)| a + step * b).collect();
                self.clamp(&mut trial);
                let moved: Vec<f64> = trial.iter().zip(&x).map(|(a, b)| a - b).collect();
                if moved.iter().all(|m| *m == 0.0) {
                    break;
                }
                evaluations += 1;
                if let Some((ft, st)) = self.value(&trial) {
                    if ft >= f + ARMIJO * dot(&g, &moved) {
                        accepted = Some((trial, ft, st, moved));
                        break;
                    }
                }
                step *= 0.5;
            }
            let Some((trial, ft, st, moved)) = accepted else {
                break;
            };
            let gt = self.gradient(&trial, &st);
            // Curvature pair for the minimization of −f.
            let y: Vec<f64> = g.iter().zip(&gt).map(|(a, b)| a - b).collect();
            if dot(&moved, &y) > 1e-12 * dot(&y, &y).sqrt() * dot(&moved, &moved).sqrt() {
                history.push((moved, y));
                if history.len() > MEMORY {
                    history.remove(0);
                }
            }
            x = trial;
            f = ft;
            g = gt;
        }
        Some(ClimbOutcome { x, value: f, converged, evaluations })
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Two-loop recursion: approximates `H g` where `H` is the inverse Hessian of
/// −f, giving an ascent direction for f.
fn ascent_direction(g: &[f64], history: &[(Vec<f64>, Vec<f64>)]) -> Vec<f64> {
    let mut q = g.to_vec();
    let mut alphas = Vec::with_capacity(history.len());
    for (s, y) in history.iter().rev() {
        let rho = 1.0 / dot(y, s);
        let a = rho * dot(s, &q);
        for (qi, yi) in q.iter_mut().zip(y) {
            *qi -= a * yi;
        }
        alphas.push((a, rho));
    }
    if let Some((s, y)) = history.last() {
        let gamma = dot(s, y) / dot(y, y);
        for qi in &mut q {
            *qi *= gamma;
        }
    }
    for ((s, y), (a, rho)) in history.iter().zip(alphas.into_iter().rev()) {
        let b = rho * dot(y, &q);
        for (qi, si) in q.iter_mut().zip(s) {
            *qi += (a - b) * si;
        }
    }
    q
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::space::InputPoint;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_dataset() -> Dataset {
        let pts: Vec<InputPoint> = (0..15).map(|i| InputPoint::new(vec![i as f64 / 14.0]).unwrap()).collect();
        let ys = pts.iter().enumerate().map(|(i, p)| (5.0 * p[0]).sin() + 0.1 * ((i * 7 % 5) as f64 - 2.0)).collect();
        Dataset::new(pts, ys).unwrap()
    }

    #[test]
    fn deterministic_given_seed() {
        let ds = small_dataset();
        let a = map_fit(&ds, &HyperPriors::default(), 5, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let b = map_fit(&ds, &HyperPriors::default(), 5, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn dominates_the_prior_mode() {
        let ds = small_dataset();
        let priors = HyperPriors::default();
        let opts = MapOptions::default();
        let fit = map_fit_with(&ds, TargetScaling::identity(), &priors, &[], &opts, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let at_mode = map_objective(&ds, TargetScaling::identity(), &priors, &opts, &priors.mode(1)).unwrap();
        assert!(fit.objective >= at_mode);
        let recomputed = map_objective(&ds, TargetScaling::identity(), &priors, &opts, &fit.hyper).unwrap();
        assert_eq!(recomputed, fit.objective);
    }

    #[test]
    fn needs_two_points() {
        let ds = Dataset::new(vec![InputPoint::new(vec![0.1]).unwrap()], vec![1.0]).unwrap();
        assert!(map_fit(&ds, &HyperPriors::default(), 1, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }

    #[test]
    fn falls_back_to_prior_mode_when_every_start_fails() {
        // Exact duplicates with noise pinned far below the ceiling: every
        // factorization violates the conditioning floor.
        let ds = Dataset::new(vec![InputPoint::new(vec![0.5]).unwrap(); 6], vec![1.0; 6]).unwrap();
        let opts = MapOptions {
            replicated: false,
            log_noise_range: ((1e-9f64).ln(), (1e-9f64).ln()),
            ..MapOptions::default()
        };
        let priors = HyperPriors::default();
        let fit = map_fit_with(&ds, TargetScaling::identity(), &priors, &[], &opts, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(fit.failed_starts, fit.starts);
        assert_eq!(fit.hyper, priors.mode(1));
    }
}

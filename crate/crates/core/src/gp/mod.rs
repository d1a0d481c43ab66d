//! Gaussian-process regression: Matérn 3/2 ARD kernel, exact Cholesky
//! inference with an escalating-jitter policy, the log marginal likelihood
//! and its analytic gradient, MAP hyperparameter fitting and joint posterior
//! sampling.
//!
//! Targets may be standardized through a [`TargetScaling`]; the model then
//! works internally in standardized units and reports predictions in the
//! original units. Hyperparameters always refer to the internal units.

mod kernel;
mod lml;
mod map;
mod model;
mod sample;

pub use kernel::{kernel, kernel_matrix};
pub use lml::{log_marginal_likelihood, replicated_log_marginal_likelihood};
pub use map::{map_fit, map_fit_with, HyperPriors, MapFit, MapOptions, NormalPrior};
pub use model::{GpModel, Prediction, VarianceKind};
pub use sample::{sample_posterior, PosteriorSampler, MAX_SAMPLE_GRID};

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::space::InputPoint;

/// Observed (x, y) pairs. Duplicate locations are kept as separate rows.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    points: Vec<InputPoint>,
    targets: Vec<f64>,
}

impl Dataset {
    pub fn new(points: Vec<InputPoint>, targets: Vec<f64>) -> Result<Self> {
        check_dim(points.len(), targets.len())?;
        let mut ds = Dataset::default();
        for (p, y) in points.into_iter().zip(targets) {
            ds.push(p, y)?;
        }
        Ok(ds)
    }

    pub fn push(&mut self, x: InputPoint, y: f64) -> Result<()> {
        if !y.is_finite() {
            return Err(Error::InvalidInput(format!("non-finite target {y}")));
        }
        if let Some(first) = self.points.first() {
            check_dim(first.dim(), x.dim())?;
        }
        self.points.push(x);
        self.targets.push(y);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> Option<usize> {
        self.points.first().map(InputPoint::dim)
    }

    pub fn points(&self) -> &[InputPoint] {
        &self.points
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    /// Number of distinct locations (exact coordinate equality).
    pub fn distinct_locations(&self) -> usize {
        lml::group_replicates(&self.points).len()
    }
}

/// Log-scale kernel and noise parameters. Gradient vectors use the layout
/// `[log ℓ₁, …, log ℓ_d, log σ_f, log σ_n]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparameters {
    pub log_lengthscales: Vec<f64>,
    pub log_signal_sd: f64,
    pub log_noise_sd: f64,
}

impl Hyperparameters {
    pub fn new(log_lengthscales: Vec<f64>, log_signal_sd: f64, log_noise_sd: f64) -> Result<Self> {
        let h = Hyperparameters { log_lengthscales, log_signal_sd, log_noise_sd };
        h.validate()?;
        Ok(h)
    }

    pub fn from_vec(d: usize, v: &[f64]) -> Result<Self> {
        check_dim(d + 2, v.len())?;
        Hyperparameters::new(v[..d].to_vec(), v[d], v[d + 1])
    }

    fn validate(&self) -> Result<()> {
        if self.log_lengthscales.is_empty() {
            return Err(Error::InvalidInput("need at least one lengthscale".into()));
        }
        let all = self.to_vec();
        if all.iter().any(|v| !v.is_finite() || !v.exp().is_finite() || v.exp() <= 0.0) {
            return Err(Error::InvalidInput(format!("hyperparameters out of range: {all:?}")));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.log_lengthscales.len()
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = self.log_lengthscales.clone();
        v.push(self.log_signal_sd);
        v.push(self.log_noise_sd);
        v
    }

    pub fn lengthscales(&self) -> Vec<f64> {
        self.log_lengthscales.iter().map(|v| v.exp()).collect()
    }

    pub fn signal_var(&self) -> f64 {
        (2.0 * self.log_signal_sd).exp()
    }

    pub fn noise_var(&self) -> f64 {
        (2.0 * self.log_noise_sd).exp()
    }
}

/// Escalating diagonal jitter. Levels are multiples of the mean kernel
/// diagonal (σ_f²). A level is accepted when the Cholesky factorization
/// completes, every squared pivot is at least `pivot_floor · σ_f²`, and the
/// jitter makes up at most half of every squared pivot. When no level is
/// accepted the covariance is reported as ill-conditioned.
///
/// Squared pivots are conditional variances given the preceding rows, so an
/// exact duplicate contributes roughly `σ_n²` (plus jitter). Duplicates with
/// `σ_n² < pivot_floor · σ_f²` therefore cannot be rescued: the jitter would
/// have to stand in for the missing noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JitterPolicy {
    pub schedule: Vec<f64>,
    pub pivot_floor: f64,
}

impl Default for JitterPolicy {
    fn default() -> Self {
        JitterPolicy { schedule: vec![0.0, 1e-10, 1e-8, 1e-6, 1e-4], pivot_floor: 1e-10 }
    }
}

impl JitterPolicy {
    pub fn ceiling(&self) -> f64 {
        self.schedule.last().copied().unwrap_or(0.0)
    }
}

/// Affine map between objective units and the model's internal units:
/// `y = offset + scale · y_internal`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetScaling {
    pub offset: f64,
    pub scale: f64,
}

impl TargetScaling {
    pub fn identity() -> Self {
        TargetScaling { offset: 0.0, scale: 1.0 }
    }

    /// Zero mean, unit sample sd. Degenerate spreads fall back to scale 1.
    pub fn standardize(targets: &[f64]) -> Self {
        if targets.is_empty() {
            return TargetScaling::identity();
        }
        let n = targets.len() as f64;
        let mean = targets.iter().sum::<f64>() / n;
        let sd = if targets.len() > 1 {
            (targets.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        let scale = if sd > 1e-12 * mean.abs().max(1.0) { sd } else { 1.0 };
        TargetScaling { offset: mean, scale }
    }

    pub fn to_internal(&self, y: f64) -> f64 {
        (y - self.offset) / self.scale
    }

    pub fn to_external(&self, y: f64) -> f64 {
        self.offset + self.scale * y
    }
}

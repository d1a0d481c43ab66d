//! Synthetic noisy objectives, dense-sample ground-truth surrogates and
//! surrogate-fidelity metrics.
//!
//! Each objective is `μ(x) + s(x)·z` with `z ~ N(0, 1)` drawn from the
//! evaluation key's stream, so a (point, key) pair always yields the same
//! value regardless of evaluation order or thread.

mod truth;

pub use truth::{
    audit_grid, build_ground_truth, fidelity, load_surface, FidelityReport, GroundTruthModel, TruthSurface, FIDELITY_GRID,
    TRUTH_FIT_CAP,
};

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{check_dim, Error, Result};
use crate::optimizer::{EvalKey, Objective};
use crate::space::{Bounds, InputPoint};

/// Names accepted by [`by_name`].
pub const NAMES: [&str; 4] = ["volatile-ttk", "bowl", "bowl-near-noiseless", "fig2-1d"];

/// An analytic mean plus heteroscedastic Gaussian noise.
#[derive(Debug, Clone)]
pub struct SyntheticObjective {
    name: &'static str,
    bounds: Bounds,
    mean_fn: fn(&[f64]) -> f64,
    noise_sd_fn: fn(&[f64]) -> f64,
    true_min_x: InputPoint,
    true_min_y: f64,
}

impl SyntheticObjective {
    pub fn name(&self) -> &'static str {
        self.name
    }

    pub fn mean(&self, x: &InputPoint) -> f64 {
        (self.mean_fn)(x.coords())
    }

    pub fn noise_sd(&self, x: &InputPoint) -> f64 {
        (self.noise_sd_fn)(x.coords())
    }

    /// Location of the minimum of the mean.
    pub fn true_min_x(&self) -> &InputPoint {
        &self.true_min_x
    }

    pub fn true_min_y(&self) -> f64 {
        self.true_min_y
    }
}

impl Objective for SyntheticObjective {
    fn bounds(&self) -> &Bounds {
        &self.bounds
    }

    fn evaluate(&self, x: &InputPoint, key: &EvalKey) -> Result<f64> {
        check_dim(self.bounds.dim(), x.dim())?;
        if !self.bounds.contains(x) {
            return Err(Error::OutOfBounds { point: x.coords().to_vec() });
        }
        let z: f64 = key.stream().rng().sample(StandardNormal);
        Ok(self.mean(x) + self.noise_sd(x) * z)
    }
}

pub fn by_name(name: &str) -> Result<SyntheticObjective> {
    match name {
        "volatile-ttk" => Ok(volatile_ttk()),
        "bowl" => Ok(bowl()),
        "bowl-near-noiseless" => Ok(bowl_near_noiseless()),
        "fig2-1d" => Ok(fig2_1d()),
        other => Err(Error::Config(format!("unknown objective '{other}' (known: {})", NAMES.join(", ")))),
    }
}

fn ttk_mean(x: &[f64]) -> f64 {
    let r2 = (x[0] - 0.25).powi(2) + (x[1] - 0.7).powi(2);
    40.0 + 30.0 * x[0] - 25.0 * (-r2 / 0.05).exp()
}

fn ttk_sd(x: &[f64]) -> f64 {
    2.0 + 12.0 * x[1] * (1.0 - x[0])
}

/// Time-to-kill stand-in on the normalized (launch, intspeed) square, in
/// seconds: a linear trend in launch, a Gaussian basin near (0.25, 0.7), and
/// noise sd between 2 and 14 s.
pub fn volatile_ttk() -> SyntheticObjective {
    SyntheticObjective {
        name: "volatile-ttk",
        bounds: Bounds::unit(2),
        mean_fn: ttk_mean,
        noise_sd_fn: ttk_sd,
        // Stationary point along x₂ = 0.7, solved to 40 digits.
        true_min_x: InputPoint::from_vec_unchecked(vec![0.219_434_168_012_963_2, 0.7]),
        true_min_y: 22.045_822_836_369_697,
    }
}

fn bowl_mean(x: &[f64]) -> f64 {
    5.0 + 10.0 * ((x[0] - 0.6).powi(2) + (x[1] - 0.3).powi(2))
}

fn bowl_sd(_: &[f64]) -> f64 {
    0.1
}

fn bowl_tiny_sd(_: &[f64]) -> f64 {
    1e-9
}

/// Quadratic bowl with minimum 5 at (0.6, 0.3) and noise sd 0.1.
pub fn bowl() -> SyntheticObjective {
    SyntheticObjective {
        name: "bowl",
        bounds: Bounds::unit(2),
        mean_fn: bowl_mean,
        noise_sd_fn: bowl_sd,
        true_min_x: InputPoint::from_vec_unchecked(vec![0.6, 0.3]),
        true_min_y: 5.0,
    }
}

/// The same bowl with noise sd 1e-9: replicates are numerically identical.
pub fn bowl_near_noiseless() -> SyntheticObjective {
    SyntheticObjective { name: "bowl-near-noiseless", noise_sd_fn: bowl_tiny_sd, ..bowl() }
}

fn fig2_mean(x: &[f64]) -> f64 {
    40.0 + 20.0 * x[0] - 15.0 * (-(x[0] - 0.3).powi(2) / 0.02).exp()
}

fn fig2_sd(x: &[f64]) -> f64 {
    1.0 + 8.0 * x[0] * (1.0 - x[0])
}

/// One-dimensional heteroscedastic curve: a basin near 0.29 on an upward
/// trend, with noise largest mid-range.
pub fn fig2_1d() -> SyntheticObjective {
    SyntheticObjective {
        name: "fig2-1d",
        bounds: Bounds::unit(1),
        mean_fn: fig2_mean,
        noise_sd_fn: fig2_sd,
        true_min_x: InputPoint::from_vec_unchecked(vec![0.286_545_435_304_946_3]),
        true_min_y: 30.866_065_098_521_923,
    }
}

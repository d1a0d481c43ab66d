//! Acquisition functions and batch proposals.
//!
//! Everything here assumes the objective is minimized. EI measures expected
//! improvement below the incumbent; the "UCB" score is the lower confidence
//! bound `μ − √β σ`, which the proposer minimizes; Thompson sampling takes the
//! argmin of a joint posterior draw.
//!
//! Batch forms, selected by asking for more than one location:
//! - EI: constant liar. Each chosen point is fantasized at the incumbent
//!   value and the model is conditioned on it before the next pick. This is
//!   an approximation to multi-point EI, not the exact integral.
//! - UCB: GP-UCB-PE. The first point minimizes the confidence bound; the
//!   rest maximize the posterior sd after conditioning on the points chosen so
//!   far, restricted to the region whose lower bound can still beat the best
//!   upper bound.
//! - TS: independent draws, each on its own freshly scrambled grid.

pub mod inner;

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

pub use inner::{maximize, InnerConfig};

use crate::error::{check_dim, Error, Result};
use crate::gp::{GpModel, PosteriorSampler, VarianceKind};
use crate::lowdisc;
use crate::rng::SeedStream;
use crate::space::{Bounds, InputPoint};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AcquisitionKind {
    Ei,
    Ucb,
    Ts,
}

impl AcquisitionKind {
    pub const ALL: [AcquisitionKind; 3] = [AcquisitionKind::Ei, AcquisitionKind::Ucb, AcquisitionKind::Ts];

    pub fn as_str(&self) -> &'static str {
        match self {
            AcquisitionKind::Ei => "ei",
            AcquisitionKind::Ucb => "ucb",
            AcquisitionKind::Ts => "ts",
        }
    }
}

impl fmt::Display for AcquisitionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AcquisitionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ei" => Ok(AcquisitionKind::Ei),
            "ucb" => Ok(AcquisitionKind::Ucb),
            "ts" => Ok(AcquisitionKind::Ts),
            other => Err(Error::Config(format!("unknown acquisition '{other}' (expected ei, ucb or ts)"))),
        }
    }
}

/// Standard normal density.
pub fn normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * PI).sqrt()
}

/// Standard normal distribution function.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

/// Expected improvement below `best` of `Y ~ N(mean, sd²)`.
pub fn expected_improvement(mean: f64, sd: f64, best: f64) -> f64 {
    let gap = best - mean;
    if !(sd > 0.0) {
        return gap.max(0.0);
    }
    let z = gap / sd;
    (gap * normal_cdf(z) + sd * normal_pdf(z)).max(0.0)
}

/// Lower confidence bound `mean − √beta · sd`; smaller is more promising.
pub fn ucb_score(mean: f64, sd: f64, beta: f64) -> f64 {
    mean - beta.sqrt() * sd
}

/// `2 log(d t² π² / (6 δ))`.
pub fn beta_schedule(t: usize, d: usize, delta: f64) -> f64 {
    let t = t as f64;
    2.0 * (d as f64 * t * t * PI * PI / (6.0 * delta)).ln()
}

/// Tunables of the proposal machinery.
#[derive(Debug, Clone, PartialEq)]
pub struct ProposalSettings {
    pub inner: InnerConfig,
    /// Grid size for each Thompson draw.
    pub ts_grid: usize,
    pub ucb_delta: f64,
    /// Minimum distance between batch points, in unit-box coordinates.
    pub min_separation: f64,
    /// Extra attempts per batch slot before giving up on it.
    pub retry_budget: usize,
}

impl Default for ProposalSettings {
    fn default() -> Self {
        ProposalSettings {
            inner: InnerConfig::default(),
            ts_grid: 1024,
            ucb_delta: 0.1,
            min_separation: 1e-6,
            retry_budget: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchProposal {
    pub locations: Vec<InputPoint>,
    /// Acquisition value at each location, in the units the selection used
    /// (EI, negated confidence bound, posterior sd, or the sampled value).
    pub values: Vec<f64>,
    /// Fewer locations than requested could be made pairwise distinct.
    pub incomplete: bool,
}

impl BatchProposal {
    pub fn len(&self) -> usize {
        self.locations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.locations.is_empty()
    }
}

/// One location maximizing the acquisition; identical to the first point of
/// a batch of size one drawn with the same rng state.
pub fn propose_single<R: Rng + ?Sized>(
    model: &GpModel,
    kind: AcquisitionKind,
    bounds: &Bounds,
    incumbent: f64,
    t: usize,
    rng: &mut R,
) -> Result<InputPoint> {
    let batch = propose_batch(model, kind, bounds, incumbent, 1, t, rng)?;
    Ok(batch.locations.into_iter().next().expect("a single proposal always has one location"))
}

pub fn propose_batch<R: Rng + ?Sized>(
    model: &GpModel,
    kind: AcquisitionKind,
    bounds: &Bounds,
    incumbent: f64,
    ms: usize,
    t: usize,
    rng: &mut R,
) -> Result<BatchProposal> {
    propose_batch_with(model, kind, bounds, incumbent, ms, t, &ProposalSettings::default(), rng)
}

#[allow(clippy::too_many_arguments)]
pub fn propose_batch_with<R: Rng + ?Sized>(
    model: &GpModel,
    kind: AcquisitionKind,
    bounds: &Bounds,
    incumbent: f64,
    ms: usize,
    t: usize,
    settings: &ProposalSettings,
    rng: &mut R,
) -> Result<BatchProposal> {
    if ms == 0 {
        return Err(Error::InvalidInput("batch size must be at least 1".into()));
    }
    check_dim(model.dim(), bounds.dim())?;
    let base = SeedStream::new(rng.next_u64());
    let mut ctx = Batch { bounds, settings, base, locations: Vec::new(), values: Vec::new() };
    let complete = match kind {
        AcquisitionKind::Ei => ctx.constant_liar(model, incumbent, ms)?,
        AcquisitionKind::Ucb => ctx.ucb_pe(model, ms, t)?,
        AcquisitionKind::Ts => ctx.thompson(model, ms)?,
    };
    Ok(BatchProposal { locations: ctx.locations, values: ctx.values, incomplete: !complete })
}

/// Argmin of one joint posterior draw over a scrambled Sobol grid of
/// `grid_size` points; grid and draw both come from `stream`.
pub fn thompson_argmin(
    model: &GpModel,
    bounds: &Bounds,
    grid_size: usize,
    stream: SeedStream,
) -> Result<(InputPoint, f64)> {
    check_dim(model.dim(), bounds.dim())?;
    let grid: Vec<InputPoint> = lowdisc::sobol(grid_size, bounds.dim(), stream.derive(1).seed())
        .iter()
        .map(|u| bounds.map_unit(u.coords()))
        .collect();
    let draw = PosteriorSampler::new(model, &grid)?.draw(&mut stream.derive(2).rng());
    let (idx, value) = draw
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |(bi, bv), (i, &v)| if v < bv { (i, v) } else { (bi, bv) });
    Ok((grid[idx].clone(), value))
}

/// Posterior means and latent sds in objective units.
fn mean_sd(model: &GpModel, xs: &[InputPoint]) -> (Vec<f64>, Vec<f64>) {
    let p = model.predict(xs, VarianceKind::Latent).expect("candidate dimension checked against the model");
    let sds = p.sds();
    (p.means, sds)
}

struct Batch<'a> {
    bounds: &'a Bounds,
    settings: &'a ProposalSettings,
    base: SeedStream,
    locations: Vec<InputPoint>,
    values: Vec<f64>,
}

impl Batch<'_> {
    fn seed(&self, slot: usize, attempt: usize) -> SeedStream {
        self.base.derive_path(&[slot as u64, attempt as u64])
    }

    fn unit_distance(&self, a: &InputPoint, b: &InputPoint) -> f64 {
        (0..self.bounds.dim())
            .map(|i| ((a[i] - b[i]) / self.bounds.width(i)).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    fn separated(&self, x: &InputPoint) -> bool {
        self.locations.iter().all(|c| self.unit_distance(x, c) >= self.settings.min_separation)
    }

    /// Fills one slot by maximizing `score`, masking points too close to the
    /// batch so far. Returns false when no attempt produced a usable point.
    fn fill<F>(&mut self, slot: usize, mut score: F) -> bool
    where
        F: FnMut(&[InputPoint]) -> Vec<f64>,
    {
        for attempt in 0..=self.settings.retry_budget {
            let seed = self.seed(slot, attempt).seed();
            let masked = |xs: &[InputPoint]| -> Vec<f64> {
                let mut v = score(xs);
                for (vi, x) in v.iter_mut().zip(xs) {
                    if !self.separated(x) {
                        *vi = f64::NEG_INFINITY;
                    }
                }
                v
            };
            let (x, value) = maximize(masked, self.bounds, &self.settings.inner, seed);
            if value > f64::NEG_INFINITY && self.separated(&x) {
                self.locations.push(x);
                self.values.push(value);
                return true;
            }
        }
        false
    }

    fn constant_liar(&mut self, model: &GpModel, incumbent: f64, ms: usize) -> Result<bool> {
        let mut current = model.clone();
        for slot in 0..ms {
            let filled = self.fill(slot, |xs| {
                let (m, s) = mean_sd(&current, xs);
                m.iter().zip(&s).map(|(m, s)| expected_improvement(*m, *s, incumbent)).collect()
            });
            if !filled {
                return Ok(false);
            }
            if slot + 1 < ms {
                let x = self.locations.last().expect("slot just filled").clone();
                match current.condition_on(&[x], &[incumbent]) {
                    Ok(next) => current = next,
                    Err(Error::IllConditioned { .. }) => return Ok(false),
                    Err(e) => return Err(e),
                }
            }
        }
        Ok(true)
    }

    fn ucb_pe(&mut self, model: &GpModel, ms: usize, t: usize) -> Result<bool> {
        let beta = beta_schedule(t.max(1), model.dim(), self.settings.ucb_delta).max(0.0);
        let root = beta.sqrt();
        if !self.fill(0, |xs| {
            let (m, s) = mean_sd(model, xs);
            m.iter().zip(&s).map(|(m, s)| -ucb_score(*m, *s, beta)).collect()
        }) {
            return Ok(false);
        }
        if ms == 1 {
            return Ok(true);
        }

        // Smallest upper bound over the box; points whose lower bound lies
        // above it cannot be the minimizer.
        let bound_seed = self.base.derive(u64::MAX).seed();
        let (_, neg_best_upper) = maximize(
            |xs| {
                let (m, s) = mean_sd(model, xs);
                m.iter().zip(&s).map(|(m, s)| -(m + root * s)).collect()
            },
            self.bounds,
            &self.settings.inner,
            bound_seed,
        );
        let best_upper = -neg_best_upper;

        let mut current = model.clone();
        for slot in 1..ms {
            let x = self.locations.last().expect("slot just filled").clone();
            // Variance does not depend on the fantasized value; use the mean.
            let y = current.predict_means(std::slice::from_ref(&x))?[0];
            match current.condition_on(&[x], &[y]) {
                Ok(next) => current = next,
                Err(Error::IllConditioned { .. }) => return Ok(false),
                Err(e) => return Err(e),
            }
            let filled = self.fill(slot, |xs| {
                let (m, s) = mean_sd(model, xs);
                let (_, s_now) = mean_sd(&current, xs);
                (0..xs.len())
                    .map(|i| if ucb_score(m[i], s[i], beta) <= best_upper { s_now[i] } else { f64::NEG_INFINITY })
                    .collect()
            });
            if !filled {
                return Ok(false);
            }
        }
        Ok(true)
    }

    fn thompson(&mut self, model: &GpModel, ms: usize) -> Result<bool> {
        for slot in 0..ms {
            let mut filled = false;
            for attempt in 0..=self.settings.retry_budget {
                let (x, value) = thompson_argmin(model, self.bounds, self.settings.ts_grid, self.seed(slot, attempt))?;
                if self.separated(&x) {
                    self.locations.push(x);
                    self.values.push(value);
                    filled = true;
                    break;
                }
            }
            if !filled {
                return Ok(false);
            }
        }
        Ok(true)
    }
}

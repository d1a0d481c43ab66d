//! Exact joint draws from the latent posterior over a finite grid.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use super::GpModel;
use crate::error::{Error, Result};
use crate::linalg;
use crate::space::InputPoint;

/// Largest grid a joint draw may cover.
pub const MAX_SAMPLE_GRID: usize = 2000;

/// Jitter levels for the posterior covariance, as multiples of its mean
/// diagonal. Conditioning is not checked here: a completed factorization is
/// an exact draw from a slightly inflated covariance.
const SAMPLE_JITTER: [f64; 7] = [0.0, 1e-12, 1e-10, 1e-8, 1e-6, 1e-4, 1e-2];

/// Posterior mean and covariance factor over a fixed grid, in objective
/// units; each call to [`draw`](PosteriorSampler::draw) is one joint sample.
#[derive(Debug, Clone)]
pub struct PosteriorSampler {
    mean: DVector<f64>,
    factor: DMatrix<f64>,
    jitter_used: f64,
}

impl PosteriorSampler {
    pub fn new(model: &GpModel, grid: &[InputPoint]) -> Result<Self> {
        if grid.is_empty() {
            return Err(Error::InvalidInput("sampling grid is empty".into()));
        }
        if grid.len() > MAX_SAMPLE_GRID {
            return Err(Error::InvalidInput(format!(
                "sampling grid has {} points, ceiling is {MAX_SAMPLE_GRID}",
                grid.len()
            )));
        }
        let cov = model.covariance_at(grid)?;
        let mean = DVector::from_vec(model.predict_means(grid)?);
        let m = grid.len();
        // Floor the scale so a fully pinned-down posterior still gets a
        // positive jitter step.
        let signal = model.hyper().signal_var() * model.scaling().scale.powi(2);
        let mean_diag = cov.diagonal().iter().map(|v| v.max(0.0)).sum::<f64>() / m as f64;
        let scale = mean_diag.max(1e-12 * signal);
        let (factor, jitter_used) = linalg::factor_escalating(&cov, scale, &SAMPLE_JITTER, None)
            .map_err(|jitter| Error::IllConditioned { jitter })?;
        Ok(PosteriorSampler { mean, factor, jitter_used })
    }

    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    /// Absolute jitter added to the posterior covariance.
    pub fn jitter_used(&self) -> f64 {
        self.jitter_used
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let m = self.mean.len();
        let z: Vec<f64> = (0..m).map(|_| rng.sample(StandardNormal)).collect();
        let mut out = self.mean.as_slice().to_vec();
        for (j, zj) in z.iter().enumerate() {
            let col = self.factor.column(j);
            for i in j..m {
                out[i] += col[i] * zj;
            }
        }
        out
    }
}

/// One joint draw of the latent function at `grid`.
pub fn sample_posterior<R: Rng + ?Sized>(model: &GpModel, grid: &[InputPoint], rng: &mut R) -> Result<Vec<f64>> {
    Ok(PosteriorSampler::new(model, grid)?.draw(rng))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gp::{Dataset, Hyperparameters, JitterPolicy, TargetScaling, VarianceKind};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn pt(v: &[f64]) -> InputPoint {
        InputPoint::new(v.to_vec()).unwrap()
    }

    #[test]
    fn prior_draws_are_standard_normal() {
        let h = Hyperparameters::new(vec![0.0], 0.0, (0.1f64).ln()).unwrap();
        let model = GpModel::prior(&h, TargetScaling::identity());
        let sampler = PosteriorSampler::new(&model, &[pt(&[0.5])]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let draws: Vec<f64> = (0..10_000).map(|_| sampler.draw(&mut rng)[0]).collect();
        let mean = draws.iter().sum::<f64>() / 10_000.0;
        assert!(mean.abs() < 0.05, "{mean}");
    }

    #[test]
    fn pinned_at_noise_free_training_point() {
        let ds = Dataset::new(vec![pt(&[0.2]), pt(&[0.7])], vec![1.5, -0.5]).unwrap();
        let h = Hyperparameters::new(vec![(0.3f64).ln()], 0.0, (1e-7f64).ln()).unwrap();
        let model = GpModel::fit(&ds, &h, &JitterPolicy::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let d = sample_posterior(&model, &[pt(&[0.2]), pt(&[0.45])], &mut rng).unwrap();
            assert!((d[0] - 1.5).abs() < 1e-5);
        }
    }

    #[test]
    fn grid_ceiling_is_enforced() {
        let h = Hyperparameters::new(vec![0.0], 0.0, 0.0).unwrap();
        let model = GpModel::prior(&h, TargetScaling::identity());
        let grid: Vec<InputPoint> = (0..=MAX_SAMPLE_GRID).map(|i| pt(&[i as f64])).collect();
        assert!(PosteriorSampler::new(&model, &grid).is_err());
    }

    #[test]
    fn mean_matches_predict() {
        let ds = Dataset::new(vec![pt(&[0.1, 0.2]), pt(&[0.8, 0.4]), pt(&[0.5, 0.9])], vec![3.0, 1.0, 2.0]).unwrap();
        let h = Hyperparameters::new(vec![(0.4f64).ln(); 2], 0.3, (0.1f64).ln()).unwrap();
        let sc = TargetScaling::standardize(ds.targets());
        let model = GpModel::fit_scaled(&ds, &h, &JitterPolicy::default(), sc).unwrap();
        let grid = vec![pt(&[0.3, 0.3]), pt(&[0.6, 0.6])];
        let sampler = PosteriorSampler::new(&model, &grid).unwrap();
        let p = model.predict(&grid, VarianceKind::Latent).unwrap();
        for i in 0..2 {
            assert!((sampler.mean()[i] - p.means[i]).abs() < 1e-10);
        }
    }
}

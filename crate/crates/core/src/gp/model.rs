use nalgebra::{DMatrix, DVector};

use super::kernel::Prepared;
use super::{Dataset, Hyperparameters, JitterPolicy, TargetScaling};
use crate::error::{check_dim, Error, Result};
use crate::linalg;
use crate::space::InputPoint;

/// Which variance `predict` reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum VarianceKind {
    /// Variance of the noise-free latent function.
    #[default]
    Latent,
    /// Latent variance plus observation noise σ_n².
    Predictive,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub means: Vec<f64>,
    pub variances: Vec<f64>,
}

impl Prediction {
    pub fn sds(&self) -> Vec<f64> {
        self.variances.iter().map(|v| v.sqrt()).collect()
    }
}

/// A fitted Gaussian-process posterior.
///
/// `chol` is the lower Cholesky factor of `K + σ_n² I + jitter_used · I` over
/// the training inputs, and `alpha` its solve against the internal targets.
#[derive(Debug, Clone)]
pub struct GpModel {
    dataset: Dataset,
    hyper: Hyperparameters,
    scaling: TargetScaling,
    policy: JitterPolicy,
    chol: DMatrix<f64>,
    alpha: DVector<f64>,
    jitter_used: f64,
}

impl GpModel {
    /// Fits on raw targets (zero prior mean).
    pub fn fit(dataset: &Dataset, hyper: &Hyperparameters, policy: &JitterPolicy) -> Result<Self> {
        GpModel::fit_scaled(dataset, hyper, policy, TargetScaling::identity())
    }

    /// Fits with targets mapped through `scaling` before inference.
    pub fn fit_scaled(
        dataset: &Dataset,
        hyper: &Hyperparameters,
        policy: &JitterPolicy,
        scaling: TargetScaling,
    ) -> Result<Self> {
        if dataset.is_empty() {
            return Err(Error::InvalidInput("cannot fit a GP to an empty dataset".into()));
        }
        check_dim(hyper.dim(), dataset.dim().unwrap_or(0))?;
        let prep = Prepared::new(hyper);
        let mut a = prep.gram(dataset.points());
        let noise = hyper.noise_var();
        for i in 0..a.nrows() {
            a[(i, i)] += noise;
        }
        let (chol, jitter_used) =
            linalg::factor_escalating(&a, prep.signal_var, &policy.schedule, Some(policy.pivot_floor))
                .map_err(|jitter| Error::IllConditioned { jitter })?;
        let y = DVector::from_iterator(dataset.len(), dataset.targets().iter().map(|v| scaling.to_internal(*v)));
        let alpha = linalg::cholesky_solve_vec(&chol, &y);
        Ok(GpModel {
            dataset: dataset.clone(),
            hyper: hyper.clone(),
            scaling,
            policy: policy.clone(),
            chol,
            alpha,
            jitter_used,
        })
    }

    /// The prior process: no observations.
    pub fn prior(hyper: &Hyperparameters, scaling: TargetScaling) -> Self {
        GpModel {
            dataset: Dataset::default(),
            hyper: hyper.clone(),
            scaling,
            policy: JitterPolicy::default(),
            chol: DMatrix::zeros(0, 0),
            alpha: DVector::zeros(0),
            jitter_used: 0.0,
        }
    }

    pub fn dataset(&self) -> &Dataset {
        &self.dataset
    }

    pub fn hyper(&self) -> &Hyperparameters {
        &self.hyper
    }

    pub fn scaling(&self) -> TargetScaling {
        self.scaling
    }

    pub fn policy(&self) -> &JitterPolicy {
        &self.policy
    }

    pub fn chol(&self) -> &DMatrix<f64> {
        &self.chol
    }

    pub fn alpha(&self) -> &DVector<f64> {
        &self.alpha
    }

    pub fn jitter_used(&self) -> f64 {
        self.jitter_used
    }

    pub fn dim(&self) -> usize {
        self.hyper.dim()
    }

    fn check_points(&self, xs: &[InputPoint]) -> Result<()> {
        xs.iter().try_for_each(|x| check_dim(self.dim(), x.dim()))
    }

    /// Posterior means and variances in objective units.
    pub fn predict(&self, xs: &[InputPoint], kind: VarianceKind) -> Result<Prediction> {
        self.check_points(xs)?;
        let (means, mut variances) = self.predict_internal(xs);
        let s2 = self.scaling.scale * self.scaling.scale;
        let noise = match kind {
            VarianceKind::Latent => 0.0,
            VarianceKind::Predictive => self.hyper.noise_var(),
        };
        let means = means.into_iter().map(|m| self.scaling.to_external(m)).collect();
        for v in &mut variances {
            *v = (*v + noise) * s2;
        }
        Ok(Prediction { means, variances })
    }

    /// Posterior means only; identical to the means reported by `predict`.
    pub fn predict_means(&self, xs: &[InputPoint]) -> Result<Vec<f64>> {
        self.check_points(xs)?;
        if self.dataset.is_empty() {
            return Ok(vec![self.scaling.to_external(0.0); xs.len()]);
        }
        let kstar = Prepared::new(&self.hyper).cross(self.dataset.points(), xs);
        Ok(kstar.tr_mul(&self.alpha).iter().map(|m| self.scaling.to_external(*m)).collect())
    }

    /// Internal-unit means and clamped latent variances.
    pub(crate) fn predict_internal(&self, xs: &[InputPoint]) -> (Vec<f64>, Vec<f64>) {
        let prep = Prepared::new(&self.hyper);
        if self.dataset.is_empty() {
            return (vec![0.0; xs.len()], vec![prep.signal_var; xs.len()]);
        }
        let mut kstar = prep.cross(self.dataset.points(), xs);
        let means = kstar.tr_mul(&self.alpha).iter().copied().collect();
        linalg::solve_lower_in_place(&self.chol, &mut kstar);
        let variances = kstar
            .column_iter()
            .map(|v| {
                let var = prep.signal_var - v.norm_squared();
                debug_assert!(var >= -1e-10 * prep.signal_var.max(1.0), "variance {var}");
                var.max(0.0)
            })
            .collect();
        (means, variances)
    }

    /// Joint latent posterior covariance at `xs` in objective units.
    pub fn covariance_at(&self, xs: &[InputPoint]) -> Result<DMatrix<f64>> {
        self.check_points(xs)?;
        let prep = Prepared::new(&self.hyper);
        let mut cov = prep.gram(xs);
        if !self.dataset.is_empty() {
            let mut v = prep.cross(self.dataset.points(), xs);
            linalg::solve_lower_in_place(&self.chol, &mut v);
            let vt = v.transpose();
            cov -= &vt * &v;
        }
        let m = xs.len();
        for j in 0..m {
            for i in j + 1..m {
                let avg = 0.5 * (cov[(i, j)] + cov[(j, i)]);
                cov[(i, j)] = avg;
                cov[(j, i)] = avg;
            }
        }
        Ok(cov * (self.scaling.scale * self.scaling.scale))
    }

    /// Conditions on additional observations, keeping hyperparameters, target
    /// scaling and jitter. The factor is extended row by row; if an extension
    /// violates the jitter policy the model is refitted from scratch.
    pub fn condition_on(&self, xs: &[InputPoint], ys: &[f64]) -> Result<GpModel> {
        check_dim(xs.len(), ys.len())?;
        self.check_points(xs)?;
        let mut dataset = self.dataset.clone();
        for (x, y) in xs.iter().zip(ys) {
            dataset.push(x.clone(), *y)?;
        }
        if self.dataset.is_empty() {
            return GpModel::fit_scaled(&dataset, &self.hyper, &self.policy, self.scaling);
        }
        match self.extended_factor(xs) {
            Some(chol) => {
                let y = DVector::from_iterator(
                    dataset.len(),
                    dataset.targets().iter().map(|v| self.scaling.to_internal(*v)),
                );
                let alpha = linalg::cholesky_solve_vec(&chol, &y);
                Ok(GpModel {
                    dataset,
                    hyper: self.hyper.clone(),
                    scaling: self.scaling,
                    policy: self.policy.clone(),
                    chol,
                    alpha,
                    jitter_used: self.jitter_used,
                })
            }
            None => GpModel::fit_scaled(&dataset, &self.hyper, &self.policy, self.scaling),
        }
    }

    fn extended_factor(&self, xs: &[InputPoint]) -> Option<DMatrix<f64>> {
        let prep = Prepared::new(&self.hyper);
        let n = self.dataset.len();
        let m = xs.len();
        let diag = prep.signal_var + self.hyper.noise_var() + self.jitter_used;
        let mut chol = DMatrix::zeros(n + m, n + m);
        chol.view_mut((0, 0), (n, n)).copy_from(&self.chol);
        let mut all: Vec<InputPoint> = self.dataset.points().to_vec();
        for (k, x) in xs.iter().enumerate() {
            let rows = n + k;
            let kvec = DVector::from_iterator(rows, all.iter().map(|p| prep.eval(p.coords(), x.coords())));
            let factor = chol.view((0, 0), (rows, rows)).clone_owned();
            let l = linalg::solve_lower_vec(&factor, &kvec);
            let pivot2 = diag - l.norm_squared();
            if !(pivot2 > 0.0) {
                return None;
            }
            for (j, v) in l.iter().enumerate() {
                chol[(rows, j)] = *v;
            }
            chol[(rows, rows)] = pivot2.sqrt();
            all.push(x.clone());
        }
        let floor = (self.policy.pivot_floor * prep.signal_var).max(2.0 * self.jitter_used);
        if linalg::min_pivot_sq(&chol) < floor {
            return None;
        }
        Some(chol)
    }

    /// Reconstructs `chol · cholᵀ` (for diagnostics and tests).
    pub fn reconstructed_covariance(&self) -> DMatrix<f64> {
        &self.chol * self.chol.transpose()
    }

    /// `K + σ_n² I + jitter_used · I` built directly from the data.
    pub fn covariance(&self) -> DMatrix<f64> {
        let prep = Prepared::new(&self.hyper);
        let mut a = prep.gram(self.dataset.points());
        let add = self.hyper.noise_var() + self.jitter_used;
        for i in 0..a.nrows() {
            a[(i, i)] += add;
        }
        a
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pt(v: &[f64]) -> InputPoint {
        InputPoint::new(v.to_vec()).unwrap()
    }

    fn hyper(ls: f64, sf: f64, sn: f64, d: usize) -> Hyperparameters {
        Hyperparameters::new(vec![ls.ln(); d], sf.ln(), sn.ln()).unwrap()
    }

    fn random_dataset(n: usize, d: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts: Vec<InputPoint> = (0..n).map(|_| pt(&(0..d).map(|_| rng.gen::<f64>()).collect::<Vec<_>>())).collect();
        let ys = pts.iter().map(|p| (6.0 * p[0]).sin() + p.coords().iter().sum::<f64>()).collect();
        Dataset::new(pts, ys).unwrap()
    }

    #[test]
    fn one_point_alpha() {
        let ds = Dataset::new(vec![pt(&[0.3])], vec![3.0]).unwrap();
        let m = GpModel::fit(&ds, &hyper(1.0, 1.0, 0.1, 1), &JitterPolicy::default()).unwrap();
        assert!((m.alpha()[0] - 3.0 / 1.01).abs() < 1e-14);
        assert_eq!(m.jitter_used(), 0.0);
    }

    #[test]
    fn duplicated_point_with_tiny_noise_is_ill_conditioned() {
        let ds = Dataset::new(vec![pt(&[0.4, 0.6]); 10], vec![1.0; 10]).unwrap();
        let err = GpModel::fit(&ds, &hyper(0.3, 1.0, 1e-9, 2), &JitterPolicy::default()).unwrap_err();
        match err {
            Error::IllConditioned { jitter } => assert_eq!(jitter, 1e-4),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn well_separated_points_need_no_jitter() {
        let pts: Vec<InputPoint> = (0..6).map(|i| pt(&[i as f64 * 0.2, 1.0 - i as f64 * 0.2])).collect();
        let ds = Dataset::new(pts, vec![1.0, 2.0, 0.5, -1.0, 0.0, 3.0]).unwrap();
        let m = GpModel::fit(&ds, &hyper(0.3, 1.0, 0.1, 2), &JitterPolicy::default()).unwrap();
        assert_eq!(m.jitter_used(), 0.0);
    }

    #[test]
    fn factor_reconstructs_covariance() {
        let ds = random_dataset(40, 2, 1);
        let m = GpModel::fit(&ds, &hyper(0.4, 1.5, 0.05, 2), &JitterPolicy::default()).unwrap();
        let a = m.covariance();
        let rel = (m.reconstructed_covariance() - &a).norm() / a.norm();
        assert!(rel < 1e-8);
        let l = m.chol();
        for i in 0..l.nrows() {
            assert!(l[(i, i)] > 0.0);
            for j in i + 1..l.ncols() {
                assert_eq!(l[(i, j)], 0.0);
            }
        }
    }

    #[test]
    fn prior_reversion_far_from_data() {
        let ds = random_dataset(10, 2, 2);
        let h = hyper(0.1, 1.7, 0.1, 2);
        let m = GpModel::fit(&ds, &h, &JitterPolicy::default()).unwrap();
        let far = pt(&[3.0, 3.0]); // ≥ 20 lengthscales away
        let p = m.predict(&[far], VarianceKind::Latent).unwrap();
        assert!(p.means[0].abs() < 1e-6);
        assert!((p.variances[0] - 1.7f64 * 1.7).abs() < 1e-6);
        let pp = m.predict(&[pt(&[3.0, 3.0])], VarianceKind::Predictive).unwrap();
        assert!((pp.variances[0] - p.variances[0] - 0.01).abs() < 1e-12);
    }

    #[test]
    fn interpolates_with_vanishing_noise() {
        let pts: Vec<InputPoint> = (0..5).map(|i| pt(&[i as f64 * 0.25])).collect();
        let ys = vec![2.0, -1.0, 0.5, 4.0, 1.0];
        let ds = Dataset::new(pts.clone(), ys.clone()).unwrap();
        let m = GpModel::fit(&ds, &hyper(0.3, 2.0, 1e-6, 1), &JitterPolicy::default()).unwrap();
        let p = m.predict(&pts, VarianceKind::Latent).unwrap();
        for (a, b) in p.means.iter().zip(&ys) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn scaled_fit_reports_external_units() {
        let ds = random_dataset(15, 1, 3);
        let sc = TargetScaling::standardize(ds.targets());
        let m = GpModel::fit_scaled(&ds, &hyper(0.3, 1.0, 1e-4, 1), &JitterPolicy::default(), sc).unwrap();
        let p = m.predict(ds.points(), VarianceKind::Latent).unwrap();
        for (a, b) in p.means.iter().zip(ds.targets()) {
            assert!((a - b).abs() < 1e-3);
        }
        let far = m.predict(&[pt(&[50.0])], VarianceKind::Latent).unwrap();
        assert!((far.means[0] - sc.offset).abs() < 1e-9);
        assert!((far.variances[0] - sc.scale * sc.scale).abs() < 1e-9);
        assert_eq!(m.predict_means(&[pt(&[0.37])]).unwrap()[0], m.predict(&[pt(&[0.37])], VarianceKind::Latent).unwrap().means[0]);
    }

    #[test]
    fn condition_on_matches_full_refit() {
        let ds = random_dataset(20, 2, 4);
        let h = hyper(0.3, 1.0, 0.05, 2);
        let m = GpModel::fit(&ds, &h, &JitterPolicy::default()).unwrap();
        let extra = vec![pt(&[0.11, 0.52]), pt(&[0.8, 0.8])];
        let ys = vec![0.3, -2.0];
        let inc = m.condition_on(&extra, &ys).unwrap();
        let mut full_ds = ds.clone();
        for (x, y) in extra.iter().zip(&ys) {
            full_ds.push(x.clone(), *y).unwrap();
        }
        let full = GpModel::fit(&full_ds, &h, &JitterPolicy::default()).unwrap();
        let probe = vec![pt(&[0.2, 0.5]), pt(&[0.9, 0.1])];
        let a = inc.predict(&probe, VarianceKind::Latent).unwrap();
        let b = full.predict(&probe, VarianceKind::Latent).unwrap();
        for i in 0..2 {
            assert!((a.means[i] - b.means[i]).abs() < 1e-10);
            assert!((a.variances[i] - b.variances[i]).abs() < 1e-10);
        }
    }

    #[test]
    fn adding_data_never_increases_latent_variance() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for trial in 0..20 {
            let ds = random_dataset(8 + trial, 2, 100 + trial as u64);
            let h = hyper(rng.gen_range(0.1..0.8), rng.gen_range(0.5..2.0), rng.gen_range(0.01..0.5), 2);
            let m = GpModel::fit(&ds, &h, &JitterPolicy::default()).unwrap();
            let probe: Vec<InputPoint> = (0..10).map(|_| pt(&[rng.gen(), rng.gen()])).collect();
            let before = m.predict(&probe, VarianceKind::Latent).unwrap();
            let m2 = m.condition_on(&[pt(&[rng.gen(), rng.gen()])], &[rng.gen()]).unwrap();
            let after = m2.predict(&probe, VarianceKind::Latent).unwrap();
            for (a, b) in after.variances.iter().zip(&before.variances) {
                assert!(*a <= *b + 1e-12);
            }
        }
    }

    #[test]
    fn empty_dataset_is_rejected_but_prior_is_available() {
        let h = hyper(0.3, 2.0, 0.1, 1);
        assert!(GpModel::fit(&Dataset::default(), &h, &JitterPolicy::default()).is_err());
        let prior = GpModel::prior(&h, TargetScaling::identity());
        let p = prior.predict(&[pt(&[0.5])], VarianceKind::Latent).unwrap();
        assert_eq!(p.means, vec![0.0]);
        assert_eq!(p.variances, vec![4.0]);
    }
}

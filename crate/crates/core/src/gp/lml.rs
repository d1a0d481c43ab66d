//! Log marginal likelihood and its gradient with respect to the
//! log-hyperparameters.
//!
//! Two routes are provided. The direct route factorizes the full n × n
//! covariance. The replicated route groups exact duplicate inputs and works on
//! the distinct locations only, using the group means with noise σ_n²/r and a
//! closed-form within-group term; without jitter both routes give the same
//! value and gradient.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};

use super::kernel::{Prepared, SQRT3};
use super::{Dataset, Hyperparameters, JitterPolicy};
use crate::error::{check_dim, Error, Result};
use crate::linalg;
use crate::space::InputPoint;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Value and gradient on raw targets, direct route.
pub fn log_marginal_likelihood(
    dataset: &Dataset,
    hyper: &Hyperparameters,
    policy: &JitterPolicy,
) -> Result<(f64, Vec<f64>)> {
    let problem = Problem::direct(dataset, dataset.targets())?;
    check_dim(hyper.dim(), problem.dim())?;
    let state = problem.value(hyper, policy)?;
    let grad = problem.gradient(&state);
    Ok((state.value, grad))
}

/// Value and gradient on raw targets, replicated route.
pub fn replicated_log_marginal_likelihood(
    dataset: &Dataset,
    hyper: &Hyperparameters,
    policy: &JitterPolicy,
) -> Result<(f64, Vec<f64>)> {
    let problem = Problem::replicated(dataset, dataset.targets())?;
    check_dim(hyper.dim(), problem.dim())?;
    let state = problem.value(hyper, policy)?;
    let grad = problem.gradient(&state);
    Ok((state.value, grad))
}

/// Groups points by exact coordinate equality, in order of first appearance.
pub(crate) fn group_replicates(points: &[InputPoint]) -> Vec<Vec<usize>> {
    let mut index: HashMap<Vec<u64>, usize> = HashMap::new();
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for (i, p) in points.iter().enumerate() {
        let key: Vec<u64> = p.coords().iter().map(|v| (v + 0.0).to_bits()).collect();
        match index.get(&key) {
            Some(&g) => groups[g].push(i),
            None => {
                index.insert(key, groups.len());
                groups.push(vec![i]);
            }
        }
    }
    groups
}

/// A likelihood problem over fixed inputs and (internal-unit) targets.
#[derive(Debug, Clone)]
pub(crate) struct Problem {
    points: Vec<InputPoint>,
    /// Targets, or group means on the replicated route.
    y: DVector<f64>,
    /// Replicate count per row (all ones on the direct route).
    counts: Vec<f64>,
    /// Within-group sums of squared deviations.
    within_ss: Vec<f64>,
    replicated: bool,
}

/// Factorization at one hyperparameter setting, reusable for the gradient.
#[derive(Debug, Clone)]
pub(crate) struct State {
    pub value: f64,
    hyper: Hyperparameters,
    chol: DMatrix<f64>,
    alpha: DVector<f64>,
}

impl Problem {
    pub fn direct(dataset: &Dataset, targets: &[f64]) -> Result<Self> {
        check_dim(dataset.len(), targets.len())?;
        if dataset.is_empty() {
            return Err(Error::InvalidInput("likelihood needs at least one observation".into()));
        }
        let n = dataset.len();
        Ok(Problem {
            points: dataset.points().to_vec(),
            y: DVector::from_column_slice(targets),
            counts: vec![1.0; n],
            within_ss: vec![0.0; n],
            replicated: false,
        })
    }

    pub fn replicated(dataset: &Dataset, targets: &[f64]) -> Result<Self> {
        check_dim(dataset.len(), targets.len())?;
        if dataset.is_empty() {
            return Err(Error::InvalidInput("likelihood needs at least one observation".into()));
        }
        let groups = group_replicates(dataset.points());
        let mut points = Vec::with_capacity(groups.len());
        let mut means = Vec::with_capacity(groups.len());
        let mut counts = Vec::with_capacity(groups.len());
        let mut within_ss = Vec::with_capacity(groups.len());
        for g in &groups {
            let r = g.len() as f64;
            let mean = g.iter().map(|&i| targets[i]).sum::<f64>() / r;
            let ss = g.iter().map(|&i| (targets[i] - mean).powi(2)).sum::<f64>();
            points.push(dataset.points()[g[0]].clone());
            means.push(mean);
            counts.push(r);
            within_ss.push(ss);
        }
        Ok(Problem { points, y: DVector::from_vec(means), counts, within_ss, replicated: true })
    }

    pub fn dim(&self) -> usize {
        self.points[0].dim()
    }

    pub fn value(&self, hyper: &Hyperparameters, policy: &JitterPolicy) -> Result<State> {
        let prep = Prepared::new(hyper);
        let noise = hyper.noise_var();
        let mut a = prep.gram(&self.points);
        for (i, r) in self.counts.iter().enumerate() {
            a[(i, i)] += noise / r;
        }
        let (chol, _jitter) = linalg::factor_escalating(&a, prep.signal_var, &policy.schedule, Some(policy.pivot_floor))
            .map_err(|jitter| Error::IllConditioned { jitter })?;
        let alpha = linalg::cholesky_solve_vec(&chol, &self.y);
        let m = self.points.len() as f64;
        let half_logdet: f64 = chol.diagonal().iter().map(|v| v.ln()).sum();
        let mut value = -0.5 * self.y.dot(&alpha) - half_logdet - 0.5 * m * LN_2PI;
        if self.replicated {
            let log_noise = noise.ln();
            for (r, ss) in self.counts.iter().zip(&self.within_ss) {
                value += -0.5 * (r - 1.0) * (LN_2PI + log_noise) - 0.5 * r.ln() - ss / (2.0 * noise);
            }
        }
        if !value.is_finite() {
            return Err(Error::IllConditioned { jitter: 0.0 });
        }
        Ok(State { value, hyper: hyper.clone(), chol, alpha })
    }

    /// `½ tr((ααᵀ − A⁻¹) ∂A/∂θ)` for each log-parameter, plus the
    /// within-group noise term on the replicated route.
    pub fn gradient(&self, state: &State) -> Vec<f64> {
        let hyper = &state.hyper;
        let d = hyper.dim();
        let prep = Prepared::new(hyper);
        let noise = hyper.noise_var();
        let inv = linalg::cholesky_inverse(&state.chol);
        let alpha = &state.alpha;
        let m = self.points.len();

        let mut g_ls = vec![0.0; d];
        let mut g_sf = 0.0;
        let mut g_sn = 0.0;
        let mut diffs = vec![0.0; d];
        for j in 0..m {
            let w_jj = alpha[j] * alpha[j] - inv[(j, j)];
            g_sf += w_jj * prep.signal_var;
            g_sn += w_jj * noise / self.counts[j];
            let xj = self.points[j].coords();
            let inv_col = inv.column(j);
            for i in j + 1..m {
                let w = alpha[i] * alpha[j] - inv_col[i];
                let xi = self.points[i].coords();
                let mut r2 = 0.0;
                for k in 0..d {
                    let t = (xi[k] - xj[k]) * prep.inv_ls[k];
                    diffs[k] = t * t;
                    r2 += diffs[k];
                }
                let r = r2.sqrt();
                let e = (-SQRT3 * r).exp();
                let kval = prep.signal_var * (1.0 + SQRT3 * r) * e;
                // Off-diagonal pairs appear twice in the trace; the ½ cancels.
                g_sf += 2.0 * w * kval;
                let common = w * 3.0 * prep.signal_var * e;
                for k in 0..d {
                    g_ls[k] += common * diffs[k];
                }
            }
        }
        let mut grad = g_ls;
        grad.push(g_sf);
        let mut sn = g_sn;
        if self.replicated {
            for (r, ss) in self.counts.iter().zip(&self.within_ss) {
                sn += -(r - 1.0) + ss / noise;
            }
        }
        grad.push(sn);
        grad
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use std::f64::consts::PI;
    use rand_chacha::ChaCha8Rng;

    fn pt(v: &[f64]) -> InputPoint {
        InputPoint::new(v.to_vec()).unwrap()
    }

    #[test]
    fn standard_normal_at_zero() {
        let ds = Dataset::new(vec![pt(&[0.5])], vec![0.0]).unwrap();
        let h = Hyperparameters::new(vec![0.0], 0.0, (1e-12f64).ln()).unwrap();
        let (v, _) = log_marginal_likelihood(&ds, &h, &JitterPolicy::default()).unwrap();
        assert!((v + 0.5 * (2.0 * PI).ln()).abs() < 1e-9);
    }

    #[test]
    fn invariant_to_permutation() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pts: Vec<InputPoint> = (0..12).map(|_| pt(&[rng.gen(), rng.gen()])).collect();
        let ys: Vec<f64> = (0..12).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let h = Hyperparameters::new(vec![(0.3f64).ln(), (0.6f64).ln()], 0.2, -1.5).unwrap();
        let a = log_marginal_likelihood(&Dataset::new(pts.clone(), ys.clone()).unwrap(), &h, &JitterPolicy::default()).unwrap();
        let mut idx: Vec<usize> = (0..12).collect();
        idx.reverse();
        idx.swap(0, 5);
        let b = log_marginal_likelihood(
            &Dataset::new(idx.iter().map(|&i| pts[i].clone()).collect(), idx.iter().map(|&i| ys[i]).collect()).unwrap(),
            &h,
            &JitterPolicy::default(),
        )
        .unwrap();
        assert!((a.0 - b.0).abs() < 1e-10);
        for (x, y) in a.1.iter().zip(&b.1) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn replicated_route_matches_direct_route() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let base: Vec<InputPoint> = (0..7).map(|_| pt(&[rng.gen(), rng.gen()])).collect();
        let mut pts = Vec::new();
        let mut ys = Vec::new();
        for (i, p) in base.iter().enumerate() {
            for _ in 0..(1 + i % 4) {
                pts.push(p.clone());
                ys.push(rng.gen_range(-1.0..1.0) + i as f64 * 0.2);
            }
        }
        let ds = Dataset::new(pts, ys).unwrap();
        let h = Hyperparameters::new(vec![(0.4f64).ln(), (0.2f64).ln()], 0.1, (0.3f64).ln()).unwrap();
        let (v1, g1) = log_marginal_likelihood(&ds, &h, &JitterPolicy::default()).unwrap();
        let (v2, g2) = replicated_log_marginal_likelihood(&ds, &h, &JitterPolicy::default()).unwrap();
        assert!((v1 - v2).abs() < 1e-9, "{v1} vs {v2}");
        for (a, b) in g1.iter().zip(&g2) {
            assert!((a - b).abs() < 1e-8, "{g1:?} vs {g2:?}");
        }
    }

    #[test]
    fn grouping_keeps_first_appearance_order() {
        let pts = vec![pt(&[1.0]), pt(&[2.0]), pt(&[1.0]), pt(&[-0.0]), pt(&[0.0])];
        assert_eq!(group_replicates(&pts), vec![vec![0, 2], vec![1], vec![3, 4]]);
    }
}

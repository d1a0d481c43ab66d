use hrmsbo::acquisition::{
    beta_schedule, expected_improvement, propose_batch, propose_single, thompson_argmin, ucb_score, AcquisitionKind,
};
use hrmsbo::gp::{Dataset, GpModel, Hyperparameters, JitterPolicy, TargetScaling, VarianceKind};
use hrmsbo::{lowdisc, Bounds, InputPoint, SeedStream};
use proptest::prelude::*;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn pt(v: &[f64]) -> InputPoint {
    InputPoint::new(v.to_vec()).unwrap()
}

fn bowl_at(c: [f64; 2]) -> impl Fn(&InputPoint) -> f64 {
    move |p| (p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2)
}

/// Bowl around (0.2, 0.2) observed on a 7×7 grid, except near its minimum.
fn promising_gap_model() -> GpModel {
    let f = bowl_at([0.2, 0.2]);
    let mut pts = Vec::new();
    for i in 0..7 {
        for j in 0..7 {
            let p = pt(&[i as f64 / 6.0, j as f64 / 6.0]);
            if (p[0] - 0.2).hypot(p[1] - 0.2) > 0.2 {
                pts.push(p);
            }
        }
    }
    let ys = pts.iter().map(&f).collect();
    let h = Hyperparameters::new(vec![(0.3f64).ln(); 2], (0.5f64).ln(), (1e-3f64).ln()).unwrap();
    GpModel::fit(&Dataset::new(pts, ys).unwrap(), &h, &JitterPolicy::default()).unwrap()
}

fn noisy_model(seed: u64, n: usize) -> GpModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pts: Vec<InputPoint> = (0..n).map(|_| pt(&[rng.gen(), rng.gen()])).collect();
    let ys = pts.iter().map(|p| (6.0 * p[0]).sin() + (4.0 * p[1]).cos() + 0.1 * rng.gen::<f64>()).collect();
    let h = Hyperparameters::new(vec![(0.25f64).ln(), (0.35f64).ln()], 0.0, (0.1f64).ln()).unwrap();
    GpModel::fit(&Dataset::new(pts, ys).unwrap(), &h, &JitterPolicy::default()).unwrap()
}

fn incumbent(model: &GpModel) -> f64 {
    model.predict_means(model.dataset().points()).unwrap().into_iter().fold(f64::INFINITY, f64::min)
}

fn audit_grid_100() -> Vec<InputPoint> {
    (0..100).flat_map(|i| (0..100).map(move |j| pt(&[(i as f64 + 0.5) / 100.0, (j as f64 + 0.5) / 100.0]))).collect()
}

fn ei_values(model: &GpModel, xs: &[InputPoint], best: f64) -> Vec<f64> {
    let p = model.predict(xs, VarianceKind::Latent).unwrap();
    p.means.iter().zip(p.sds()).map(|(m, s)| expected_improvement(*m, s, best)).collect()
}

#[test]
fn ei_proposal_targets_the_unsampled_promising_region() {
    let model = promising_gap_model();
    let best = incumbent(&model);
    let x = propose_single(&model, AcquisitionKind::Ei, &Bounds::unit(2), best, 1, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
    assert!((x[0] - 0.2).hypot(x[1] - 0.2) < 0.2, "proposal {x:?}");
    let at = ei_values(&model, std::slice::from_ref(&x), best)[0];
    let grid_max = ei_values(&model, &audit_grid_100(), best).into_iter().fold(f64::NEG_INFINITY, f64::max);
    assert!(at >= grid_max - 1e-9, "EI at proposal {at}, grid max {grid_max}");
}

#[test]
fn proposals_are_deterministic_given_the_rng() {
    let model = noisy_model(1, 15);
    for kind in AcquisitionKind::ALL {
        let a = propose_batch(&model, kind, &Bounds::unit(2), 0.0, 3, 4, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = propose_batch(&model, kind, &Bounds::unit(2), 0.0, 3, 4, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b, "{kind}");
    }
}

#[test]
fn batches_are_complete_and_separated() {
    let model = noisy_model(2, 25);
    let bounds = Bounds::new(vec![-1.0, 10.0], vec![1.0, 14.0]).unwrap();
    let scaled = {
        let pts = model.dataset().points().iter().map(|p| bounds.from_unit(p).unwrap()).collect();
        let ds = Dataset::new(pts, model.dataset().targets().to_vec()).unwrap();
        let h = Hyperparameters::new(vec![(0.5f64).ln(), (1.4f64).ln()], 0.0, (0.1f64).ln()).unwrap();
        GpModel::fit(&ds, &h, &JitterPolicy::default()).unwrap()
    };
    for kind in AcquisitionKind::ALL {
        for ms in [1, 3, 5] {
            let b = propose_batch(&scaled, kind, &bounds, 0.0, ms, 7, &mut ChaCha8Rng::seed_from_u64(ms as u64)).unwrap();
            assert_eq!(b.len(), ms, "{kind} ms={ms}");
            assert!(!b.incomplete);
            for (i, x) in b.locations.iter().enumerate() {
                assert!(bounds.contains(x), "{x:?} outside bounds");
                for y in &b.locations[..i] {
                    let d = ((x[0] - y[0]) / 2.0).hypot((x[1] - y[1]) / 4.0);
                    assert!(d >= 1e-6, "{kind}: points {x:?} and {y:?} coincide");
                }
            }
        }
    }
}

#[test]
fn ucb_pe_follow_up_points_maximize_updated_sd_in_the_relevant_region() {
    let model = noisy_model(4, 20);
    let unit = Bounds::unit(2);
    let t = 6;
    let batch = propose_batch(&model, AcquisitionKind::Ucb, &unit, 0.0, 3, t, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
    let beta = beta_schedule(t, 2, 0.1);
    let grid = lowdisc::dense_grid(2);
    let prior = model.predict(&grid, VarianceKind::Latent).unwrap();
    let prior_sd = prior.sds();
    let min_upper = prior.means.iter().zip(&prior_sd).map(|(m, s)| m + beta.sqrt() * s).fold(f64::INFINITY, f64::min);
    // Grid points safely inside the region whose lower bound can beat the
    // best upper bound.
    let relevant: Vec<usize> =
        (0..grid.len()).filter(|&i| ucb_score(prior.means[i], prior_sd[i], beta) <= min_upper - 1e-3).collect();
    assert!(!relevant.is_empty());

    let mut current = model.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for k in 1..3 {
        let prev = batch.locations[k - 1].clone();
        current = current.condition_on(std::slice::from_ref(&prev), &[rng.gen_range(-5.0..5.0)]).unwrap();
        let sd_at = current.predict(std::slice::from_ref(&batch.locations[k]), VarianceKind::Latent).unwrap().sds()[0];
        let sds = current.predict(&grid, VarianceKind::Latent).unwrap().sds();
        let grid_best = relevant.iter().map(|&i| sds[i]).fold(f64::NEG_INFINITY, f64::max);
        assert!(sd_at >= grid_best - 1e-6, "slot {k}: sd {sd_at} vs grid {grid_best}");
        // Strictly above anything within the separation radius of earlier picks.
        for prev in &batch.locations[..k] {
            let near = pt(&[(prev[0] + 5e-7).min(1.0), prev[1]]);
            let s = current.predict(&[near], VarianceKind::Latent).unwrap().sds()[0];
            assert!(sd_at > s);
        }
    }
}

#[test]
fn variance_update_does_not_depend_on_fantasy_targets() {
    let model = noisy_model(7, 18);
    let extra = vec![pt(&[0.31, 0.62]), pt(&[0.9, 0.05])];
    let probe: Vec<InputPoint> = lowdisc::sobol(200, 2, 11);
    let a = model.condition_on(&extra, &[100.0, -3.0]).unwrap();
    let mut ds = model.dataset().clone();
    ds.push(extra[0].clone(), 0.0).unwrap();
    ds.push(extra[1].clone(), 7.5).unwrap();
    let b = GpModel::fit(&ds, model.hyper(), &JitterPolicy::default()).unwrap();
    let sa = a.predict(&probe, VarianceKind::Latent).unwrap().sds();
    let sb = b.predict(&probe, VarianceKind::Latent).unwrap().sds();
    for (x, y) in sa.iter().zip(&sb) {
        assert!((x - y).abs() < 1e-8);
    }
}

#[test]
fn thompson_batch_uses_one_substream_per_slot() {
    let model = noisy_model(8, 15);
    let unit = Bounds::unit(2);
    let seed = 21;
    let batch = propose_batch(&model, AcquisitionKind::Ts, &unit, 0.0, 3, 1, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
    let base = SeedStream::new(ChaCha8Rng::seed_from_u64(seed).next_u64());
    let per_slot: Vec<InputPoint> =
        (0..3).map(|k| thompson_argmin(&model, &unit, 1024, base.derive_path(&[k, 0])).unwrap().0).collect();
    assert_eq!(batch.locations, per_slot);
    // Reordering the substreams reorders the points the same way.
    let permuted: Vec<InputPoint> =
        [2u64, 0, 1].iter().map(|&k| thompson_argmin(&model, &unit, 1024, base.derive_path(&[k, 0])).unwrap().0).collect();
    assert_eq!(permuted, vec![per_slot[2].clone(), per_slot[0].clone(), per_slot[1].clone()]);
}

#[test]
fn thompson_on_a_degenerate_posterior_finds_the_known_argmin() {
    let pts: Vec<InputPoint> = (0..41).map(|i| pt(&[i as f64 / 40.0])).collect();
    let ys = pts.iter().map(|p| (p[0] - 0.37).abs()).collect();
    let h = Hyperparameters::new(vec![(0.3f64).ln()], (0.3f64).ln(), (1e-5f64).ln()).unwrap();
    let model = GpModel::fit_scaled(&Dataset::new(pts, ys).unwrap(), &h, &JitterPolicy::default(), TargetScaling::identity()).unwrap();
    for seed in 0..5 {
        let x = propose_single(&model, AcquisitionKind::Ts, &Bounds::unit(1), 0.0, 1, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        assert!((x[0] - 0.37).abs() < 0.01, "{x:?}");
    }
}

#[test]
fn ucb_score_examples() {
    assert_eq!(ucb_score(1.0, 2.0, 4.0), -3.0);
    assert_eq!(ucb_score(0.7, 3.0, 0.0), 0.7);
    assert!((beta_schedule(10, 2, 0.1) - 2.0 * (200.0 * std::f64::consts::PI.powi(2) / 0.6).ln()).abs() < 1e-12);
}

proptest! {
    #[test]
    fn ei_is_nonnegative_and_zero_without_uncertainty(mean in -50.0f64..50.0, sd in 0.0f64..20.0, best in -50.0f64..50.0) {
        prop_assert!(expected_improvement(mean, sd, best) >= 0.0);
        if mean >= best {
            prop_assert_eq!(expected_improvement(mean, 0.0, best), 0.0);
        }
    }

    #[test]
    fn ucb_score_is_monotone_in_beta(mean in -10.0f64..10.0, sd in 1e-6f64..5.0, b1 in 0.0f64..30.0, b2 in 0.0f64..30.0) {
        let (lo, hi) = if b1 <= b2 { (b1, b2) } else { (b2, b1) };
        prop_assert!(ucb_score(mean, sd, hi) <= ucb_score(mean, sd, lo));
    }

    #[test]
    fn beta_grows_with_t(t in 1usize..10_000, d in 1usize..12) {
        prop_assert!(beta_schedule(t + 1, d, 0.1) > beta_schedule(t, d, 0.1));
    }
}

use std::sync::OnceLock;

use hrmsbo::benchmarks::{
    build_ground_truth, by_name, fidelity, load_surface, volatile_ttk, GroundTruthModel, NAMES,
};
use hrmsbo::gp::{Dataset, GpModel, Hyperparameters, TargetScaling};
use hrmsbo::optimizer::{EvalKey, Objective};
use hrmsbo::InputPoint;

fn truth() -> &'static GroundTruthModel {
    static TRUTH: OnceLock<GroundTruthModel> = OnceLock::new();
    TRUTH.get_or_init(|| build_ground_truth(&volatile_ttk(), 21, 5, 12).unwrap())
}

fn key(i: u64) -> EvalKey {
    EvalKey { run_seed: 99, iter: 3, location: 0, repeat: i, attempt: 0 }
}

#[test]
fn noise_has_the_stated_mean_and_sd() {
    for name in NAMES {
        let f = by_name(name).unwrap();
        let d = f.bounds().dim();
        for x in [vec![0.3; d], vec![0.8; d]] {
            let x = InputPoint::new(x).unwrap();
            let ys: Vec<f64> = (0..10_000).map(|i| f.evaluate(&x, &key(i)).unwrap()).collect();
            let n = ys.len() as f64;
            let mean = ys.iter().sum::<f64>() / n;
            let sd = (ys.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
            let s = f.noise_sd(&x);
            assert!((mean - f.mean(&x)).abs() < 4.0 * s / n.sqrt(), "{name}: mean {mean}");
            assert!((sd / s - 1.0).abs() < 0.05, "{name}: sd {sd} vs {s}");
        }
    }
}

#[test]
fn ground_truth_samples_every_node_and_tracks_the_mean() {
    let t = truth();
    let f = volatile_ttk();
    assert_eq!(t.total_evaluations, 21 * 21 * 5);
    assert_eq!(t.grid.len(), 441);
    assert_eq!(t.grid_per_dim(), 21);
    assert_eq!(t.surface.grid.len(), 101 * 101);
    let x = f.true_min_x();
    let m = t.model.predict_means(std::slice::from_ref(x)).unwrap()[0];
    let s = f.noise_sd(x);
    assert!((m - f.true_min_y()).abs() < 2.0 * (s / 5f64.sqrt() + 1.0), "{m}");
}

#[test]
fn ground_truth_is_deterministic() {
    let again = build_ground_truth(&volatile_ttk(), 21, 5, 12).unwrap();
    assert_eq!(again.surface, truth().surface);
    assert_eq!(again.model.hyper(), truth().model.hyper());
    let other = build_ground_truth(&volatile_ttk(), 21, 5, 13).unwrap();
    assert_ne!(other.surface, truth().surface);
}

#[test]
fn fidelity_of_the_truth_against_itself_is_perfect() {
    let t = truth();
    let r = fidelity(&t.model, t, &volatile_ttk(), 200, 4).unwrap();
    assert_eq!(r.rmse_mean, 0.0);
    assert_eq!(r.rmse_sd, 0.0);
    assert!(r.nlpd.is_finite());
}

fn constant_baseline(t: &GroundTruthModel) -> GpModel {
    // Grand mean and grand sd of the truth data; no spatial signal.
    let scaling = TargetScaling::standardize(t.model.dataset().targets());
    let h = Hyperparameters::new(vec![0.0, 0.0], -10.0, 0.0).unwrap();
    GpModel::prior(&h, scaling)
}

#[test]
fn truth_beats_a_constant_predictor() {
    let t = truth();
    let base = constant_baseline(t);
    let f = volatile_ttk();
    let rt = fidelity(&t.model, t, &f, 1000, 5).unwrap();
    let rb = fidelity(&base, t, &f, 1000, 5).unwrap();
    assert!(rt.nlpd <= rb.nlpd, "truth {} vs constant {}", rt.nlpd, rb.nlpd);
    assert!(rb.rmse_mean > rt.rmse_mean);
}

#[test]
fn fidelity_ignores_data_order() {
    let t = truth();
    let ds = t.model.dataset();
    let take: Vec<usize> = (0..ds.len()).step_by(7).collect();
    let fwd = Dataset::new(take.iter().map(|&i| ds.points()[i].clone()).collect(), take.iter().map(|&i| ds.targets()[i]).collect()).unwrap();
    let rev = Dataset::new(
        take.iter().rev().map(|&i| ds.points()[i].clone()).collect(),
        take.iter().rev().map(|&i| ds.targets()[i]).collect(),
    )
    .unwrap();
    let a = GpModel::fit_scaled(&fwd, t.model.hyper(), t.model.policy(), t.model.scaling()).unwrap();
    let b = GpModel::fit_scaled(&rev, t.model.hyper(), t.model.policy(), t.model.scaling()).unwrap();
    let ra = fidelity(&a, t, &volatile_ttk(), 300, 6).unwrap();
    let rb = fidelity(&b, t, &volatile_ttk(), 300, 6).unwrap();
    assert!((ra.rmse_mean - rb.rmse_mean).abs() < 1e-9);
    assert!((ra.rmse_sd - rb.rmse_sd).abs() < 1e-9);
    assert!((ra.nlpd - rb.nlpd).abs() < 1e-9);
    assert!(ra.rmse_mean > 0.0);
}

#[test]
fn saved_truth_reloads_to_the_same_surrogate() {
    let t = truth();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("truth.json");
    t.save(&path).unwrap();
    let back = GroundTruthModel::load(&path).unwrap();
    assert_eq!(back.surface, t.surface);
    assert_eq!(back.grid, t.grid);
    assert_eq!(back.total_evaluations, t.total_evaluations);
    let probe = &t.surface.grid[..500];
    let a = t.model.predict_means(probe).unwrap();
    let b = back.model.predict_means(probe).unwrap();
    for (x, y) in a.iter().zip(&b) {
        assert!((x - y).abs() < 1e-9);
    }
    assert_eq!(load_surface(&path).unwrap(), t.surface);
}

#[test]
fn missing_truth_file_names_the_path() {
    let err = GroundTruthModel::load(std::path::Path::new("/nonexistent/truth.json")).unwrap_err();
    assert!(err.to_string().contains("/nonexistent/truth.json"), "{err}");
}

#[test]
fn noiseless_replicates_fall_back_to_node_means() {
    let t = build_ground_truth(&hrmsbo::benchmarks::bowl_near_noiseless(), 11, 3, 1).unwrap();
    assert_eq!(t.total_evaluations, 363);
    assert_eq!(t.model.dataset().len(), 121);
    let m = t.model.predict_means(&[InputPoint::new(vec![0.6, 0.3]).unwrap()]).unwrap()[0];
    assert!((m - 5.0).abs() < 1e-3, "{m}");
}

use std::fs;
use std::process::{Command, Output};

fn hrmsbo(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hrmsbo")).args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

#[test]
fn single_prints_a_json_result() {
    let o = hrmsbo(&["single", "--objective", "bowl", "--acq", "ei", "--rs", "2", "--ms", "2", "--budget", "24", "--n-seed", "8", "--seed", "3"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["acquisition"], "ei");
    assert_eq!(v["evals_used"], 24);
    assert_eq!(v["iters"], 4);
    assert_eq!(v["termination"], "budget");
    assert_eq!(v["x_hat"].as_array().unwrap().len(), 2);
    assert!(v["hyperparameters"]["log_lengthscales"].is_array());
    // Same seed, same output.
    let again = hrmsbo(&["single", "--objective", "bowl", "--acq", "ei", "--rs", "2", "--ms", "2", "--budget", "24", "--n-seed", "8", "--seed", "3"]);
    assert_eq!(o.stdout, again.stdout);
}

#[test]
fn configuration_errors_exit_with_2() {
    let o = hrmsbo(&["single", "--objective", "rosenbrock"]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("rosenbrock"));
    assert_eq!(code(&hrmsbo(&["single", "--objective", "bowl", "--acq", "pi"])), 2);
    assert_eq!(code(&hrmsbo(&["single", "--objective", "bowl", "--rs", "0"])), 2);

    let dir = tempfile::tempdir().unwrap();
    let plan = dir.path().join("plan.json");
    fs::write(&plan, r#"{"objective": "bowl", "repeat": 2}"#).unwrap();
    let out = dir.path().join("out");
    assert_eq!(code(&hrmsbo(&["run", "--plan", plan.to_str().unwrap(), "--out", out.to_str().unwrap()])), 2);
}

#[test]
fn missing_files_exit_with_3() {
    let dir = tempfile::tempdir().unwrap();
    let plan = dir.path().join("nope.json");
    let o = hrmsbo(&["run", "--plan", plan.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&o), 3);
    assert!(String::from_utf8_lossy(&o.stderr).contains("nope.json"));
    assert_eq!(code(&hrmsbo(&["report", "--in", dir.path().join("missing").to_str().unwrap()])), 3);
}

#[test]
fn truth_run_and_report_produce_the_output_tree() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = hrmsbo(&["truth", "--objective", "bowl", "--grid", "6", "--reps", "2", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("truth.json").exists());

    let plan = dir.path().join("plan.json");
    fs::write(
        &plan,
        r#"{"objective": "bowl", "acquisitions": ["ucb", "ts"], "rs_levels": [1, 2], "ms_levels": [1],
            "repeats": 1, "budget_evals": 12, "n_seed": 6, "base_seed": 9}"#,
    )
    .unwrap();
    let o = hrmsbo(&["run", "--plan", plan.to_str().unwrap(), "--out", out.to_str().unwrap(), "--parallelism", "2"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["plan.json", "records.csv", "failures.csv", "summary.csv", "plotdata/fig3_scatter.csv", "plotdata/fig4_counts.csv", "plotdata/fig5_surfaces.csv"] {
        assert!(out.join(f).exists(), "{f} missing");
    }
    let records = fs::read_to_string(out.join("records.csv")).unwrap();
    assert_eq!(records.lines().count(), 5);
    let summary = fs::read(out.join("summary.csv")).unwrap();

    let o = hrmsbo(&["report", "--in", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(String::from_utf8_lossy(&o.stdout).lines().count(), 4);
    assert_eq!(fs::read(out.join("summary.csv")).unwrap(), summary);
}

//! End-to-end runs of the `dirollout` binary against small configurations.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use dirollout::harness::report::{read_trajectory_csv, RunSummary};
use dirollout::load_artifact;
use serde_json::{json, Value};
use tempfile::TempDir;

fn small_config() -> Value {
    json!({
        "schema_version": 1,
        "states": 2,
        "controls": 2,
        "horizon": 8,
        "rolling_horizon": 3,
        "quantization_levels": 6,
        "kernel": { "binary_symmetric": { "alpha0": 0.4, "alpha1": 0.8 } },
        "initial_state_distribution": [0.5, 0.5],
        "initial_policy": [[0.8, 0.2], [0.2, 0.8]],
        "multiplier_s": -2.0,
        "threshold_d": 0.12,
        "rollout_rounds": 2,
        "seed": 3,
        "workers": 1,
        "bench": { "levels": [4, 6], "rolling_horizons": [1, 2, 3], "horizons": [4, 6, 8] }
    })
}

fn write_config(dir: &Path, cfg: &Value) -> PathBuf {
    let path = dir.join("config.json");
    std::fs::write(&path, serde_json::to_string_pretty(cfg).unwrap()).unwrap();
    path
}

fn run(args: &[&str], config: &Path, out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dirollout"))
        .args(args)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .env_remove("DIROLLOUT_WORKERS")
        .output()
        .unwrap()
}

fn ok(output: &Output) {
    assert!(
        output.status.success(),
        "exit {:?}\nstdout:\n{}\nstderr:\n{}",
        output.status.code(),
        String::from_utf8_lossy(&output.stdout),
        String::from_utf8_lossy(&output.stderr)
    );
}

fn setup() -> (TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), &small_config());
    (dir, config)
}

#[test]
fn training_twice_writes_identical_artifacts() {
    let (dir, config) = setup();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    ok(&run(&["train"], &config, &a));
    ok(&run(&["train", "--workers", "2"], &config, &b));
    let bytes = |d: &Path| std::fs::read(d.join("artifact.json")).unwrap();
    assert_eq!(bytes(&a), bytes(&b));
}

#[test]
fn rollout_and_baseline_write_paired_trajectories() {
    let (dir, config) = setup();
    let out = dir.path().join("out");
    ok(&run(&["rollout"], &config, &out));
    ok(&run(&["baseline"], &config, &out));
    let rollout = read_trajectory_csv(&out.join("rollout_trajectory.csv")).unwrap();
    let baseline = read_trajectory_csv(&out.join("baseline_trajectory.csv")).unwrap();
    assert_eq!(rollout.len(), 9);
    assert_eq!(baseline.len(), 9);
    for (k, (r, b)) in rollout.iter().zip(&baseline).enumerate() {
        assert_eq!((r.t, b.t), (k, k));
    }
    // the fixed initial policy makes stage 0 identical
    assert_eq!(rollout[0].lagrangian_stage_cost, baseline[0].lagrangian_stage_cost);
    assert!(out.join("baseline_artifact.json").exists());
}

#[test]
fn summaries_agree_with_their_trajectory_files() {
    let (dir, config) = setup();
    let out = dir.path().join("out");
    ok(&run(&["rollout"], &config, &out));
    let summary = RunSummary::read(&out.join("rollout_summary.json")).unwrap();
    let record = &summary.runs[0];
    let rows = read_trajectory_csv(&out.join(record.trajectory_csv.as_ref().unwrap())).unwrap();
    assert!(record.totals.as_ref().unwrap().discrepancy(&rows) <= 1e-9);
    let artifact = load_artifact(&out.join("artifact.json"), None).unwrap();
    assert_eq!(artifact.header.fingerprint, summary.fingerprint);
    assert_eq!(summary.seed, 3);
}

#[test]
fn repeat_writes_one_artifact_and_trajectory_per_round() {
    let (dir, config) = setup();
    let out = dir.path().join("out");
    ok(&run(&["repeat"], &config, &out));
    for r in 1..=2 {
        assert!(out.join(format!("artifact_round{r}.json")).exists());
        assert_eq!(read_trajectory_csv(&out.join(format!("trajectory_round{r}.csv"))).unwrap().len(), 9);
    }
    assert!(!out.join("artifact_round3.json").exists());
    assert_eq!(RunSummary::read(&out.join("repeat_summary.json")).unwrap().runs.len(), 2);
}

#[test]
fn out_of_range_transition_probability_exits_with_config_code() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config();
    cfg["kernel"]["binary_symmetric"]["alpha0"] = json!(1.0);
    cfg["multiplier_s"] = json!(0.5);
    let config = write_config(dir.path(), &cfg);
    let output = run(&["train"], &config, &dir.path().join("out"));
    assert_eq!(output.status.code(), Some(2));
    let err = String::from_utf8_lossy(&output.stderr);
    assert!(err.contains("alpha0"), "{err}");
    assert!(err.contains("multiplier_s"), "{err}");
}

#[test]
fn artifact_from_another_configuration_is_rejected() {
    let (dir, config) = setup();
    let out = dir.path().join("out");
    ok(&run(&["train"], &config, &out));
    let artifact = out.join("artifact.json");
    let stale = run(
        &["rollout", "--epsilon", "1e-7", "--artifact", artifact.to_str().unwrap()],
        &config,
        &dir.path().join("stale"),
    );
    assert_eq!(stale.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&stale.stderr).contains("fingerprint"));
    ok(&run(&["rollout", "--artifact", artifact.to_str().unwrap()], &config, &dir.path().join("fresh")));
}

#[test]
fn worker_count_falls_back_to_the_environment() {
    let (dir, config) = setup();
    let out = dir.path().join("env");
    let output = Command::new(env!("CARGO_BIN_EXE_dirollout"))
        .args(["train", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(&out)
        .env("DIROLLOUT_WORKERS", "3")
        .output()
        .unwrap();
    ok(&output);
    assert_eq!(RunSummary::read(&out.join("train_summary.json")).unwrap().workers, 3);
    let flag = dir.path().join("flag");
    ok(&run(&["train", "--workers", "2"], &config, &flag));
    assert_eq!(RunSummary::read(&flag.join("train_summary.json")).unwrap().workers, 2);
}

#[test]
fn bench_with_a_two_point_sweep_exits_with_fit_code() {
    let (dir, config) = setup();
    let output = run(&["bench"], &config, &dir.path().join("out"));
    assert_eq!(output.status.code(), Some(5));
}

#[test]
fn seed_override_is_recorded() {
    let (dir, config) = setup();
    let out = dir.path().join("out");
    ok(&run(&["train", "--seed", "42"], &config, &out));
    assert_eq!(RunSummary::read(&out.join("train_summary.json")).unwrap().seed, 42);
}

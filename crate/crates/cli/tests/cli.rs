use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn ccmeans(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ccmeans"))
        .args(args)
        .current_dir(workspace())
        .env("RUST_LOG", "error")
        .output()
        .expect("binary runs")
}

fn workspace() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn json(p: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

/// Writes a separated instance with `k` clusters of `n` points and `n0` outliers.
fn synth(dir: &Path, k: usize, n: usize, n0: usize) -> PathBuf {
    let path = dir.join("data.csv");
    let spec = format!("{k}:{n}");
    let n0 = n0.to_string();
    let o = ccmeans(&["synth", "--spec", &spec, "--outliers", &n0, "--seed", "5", "--out", s(&path)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    path
}

#[test]
fn synth_is_seeded_and_marks_outliers() {
    let a = ccmeans(&["synth", "--spec", "2:4", "--outliers", "1", "--seed", "9"]);
    let b = ccmeans(&["synth", "--spec", "2:4", "--outliers", "1", "--seed", "9"]);
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(a.stdout, b.stdout);
    let text = stdout(&a);
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("x0,x1,label"));
    let labels: Vec<&str> = lines.map(|l| l.rsplit(',').next().unwrap()).collect();
    assert_eq!(labels.len(), 9);
    assert_eq!(labels.iter().filter(|l| **l == "-1").count(), 1);
    let other = ccmeans(&["synth", "--spec", "2:4", "--outliers", "1", "--seed", "10"]);
    assert_ne!(other.stdout, a.stdout);
}

#[test]
fn cluster_recovers_a_separated_instance() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), 3, 5, 2);
    let out = dir.path().join("result.json");
    let sdpa = dir.path().join("program.dat-s");
    let o = ccmeans(&[
        "cluster", s(&data), "--label-column", "label", "--spec", "labels", "--kind", "R_LP_ob+round",
        "--out", s(&out), "--export", s(&sdpa),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let doc = json(&out);
    assert_eq!(doc["row"]["accuracy"], 1.0);
    assert_eq!(doc["sizes"], serde_json::json!([5, 5, 5]));
    assert_eq!(doc["outliers"], 2);
    let labels = doc["labels"].as_array().unwrap();
    assert_eq!(labels.len(), 17);
    assert_eq!(labels.iter().filter(|l| l.as_i64() == Some(-1)).count(), 2);
    let lb = doc["row"]["lower_bound"].as_f64().unwrap();
    let ub = doc["row"]["upper_bound"].as_f64().unwrap();
    assert!(lb <= ub + 1e-6 * (1.0 + ub));
    assert!(std::fs::read_to_string(&sdpa).unwrap().starts_with('"'));
}

#[test]
fn cluster_json_export() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), 2, 3, 0);
    let export = dir.path().join("program.json");
    let o = ccmeans(&["cluster", s(&data), "--label-column", "label", "--spec", "3,3", "--kind", "R_SDP", "--export", s(&export)]);
    assert_eq!(o.status.code(), Some(0));
    assert!(json(&export).get("objective").is_some());
}

#[test]
fn oracle_agrees_with_rounding_on_a_tiny_instance() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), 2, 4, 1);
    let out = dir.path().join("oracle.json");
    let o = ccmeans(&["oracle", s(&data), "--label-column", "label", "--spec", "labels", "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(0));
    let exact = json(&out)["cost"].as_f64().unwrap();
    let res = dir.path().join("round.json");
    let o = ccmeans(&["cluster", s(&data), "--label-column", "label", "--spec", "4,4+1", "--kind", "R_LP_ob+round", "--out", s(&res)]);
    assert_eq!(o.status.code(), Some(0));
    let ub = json(&res)["row"]["upper_bound"].as_f64().unwrap();
    assert!((ub - exact).abs() <= 1e-9 * (1.0 + exact), "{ub} vs {exact}");
}

#[test]
fn elbow_writes_the_curve() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), 2, 4, 2);
    let out = dir.path().join("elbow.csv");
    let o = ccmeans(&["elbow", s(&data), "--label-column", "label", "--spec", "1,1", "--grid", "0,2,4,6", "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("chosen n0 = 2"), "{}", stdout(&o));
    let csv = std::fs::read_to_string(&out).unwrap();
    assert!(csv.lines().next().unwrap().starts_with("n0,"));
    assert_eq!(csv.lines().count(), 5);
}

#[test]
fn bench_runs_a_config_and_applies_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("report.json");
    let o = ccmeans(&["bench", "--spec", "configs/separated.json", "--kind", "R_LP_ob+round,oracle", "--workers", "2", "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let report = json(&out);
    let rows = report["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0]["method"], "R_LP_ob+round");
    assert_eq!(rows[0]["accuracy"], 1.0);
    assert_eq!(rows[1]["status"], "error");
}

#[test]
fn configuration_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), 2, 3, 0);
    for args in [
        vec!["cluster", s(&data), "--spec", "x,y"],
        vec!["cluster", s(&data), "--spec", "3,3", "--kind", "nonsense"],
        vec!["cluster", "/nonexistent.csv", "--spec", "3,3"],
        vec!["cluster", s(&data), "--spec", "4,4"],
        vec!["bench", "--spec", "/nonexistent.json"],
        vec!["synth", "--kind", "balls", "--spec", "3,3", "--outliers", "1"],
    ] {
        let o = ccmeans(&args);
        assert_eq!(o.status.code(), Some(2), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    }
}

#[test]
fn resource_limits_exit_four() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), 3, 10, 2);
    let o = ccmeans(&["oracle", s(&data), "--label-column", "label", "--spec", "labels"]);
    assert_eq!(o.status.code(), Some(4));
    let big = synth(dir.path(), 4, 25, 0);
    let o = ccmeans(&["cluster", s(&big), "--label-column", "label", "--spec", "labels", "--kind", "R_SDP_b", "--time-budget", "0.000001"]);
    assert_eq!(o.status.code(), Some(4), "{}", String::from_utf8_lossy(&o.stderr));
}

use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_driftbridge"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> Vec<u8> {
    let out = run(dir, args);
    assert!(
        out.status.success(),
        "{args:?} exited {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    out.stdout
}

fn json(bytes: &[u8]) -> Value {
    serde_json::from_slice(bytes).unwrap()
}

/// A 300-point reference in 4 dimensions plus a calibration for `stat`.
fn setup(stat: &str) -> TempDir {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    ok(dir, &["generate", "--n", "300", "--dim", "4", "--classes", "3", "--seed", "1", "--out", "ref.csv"]);
    ok(
        dir,
        &["calibrate", "--ref", "ref.csv", "--stat", stat, "--test-size", "20", "--permutations", "60", "--seed", "5", "--out", "calib.json"],
    );
    tmp
}

fn head(dir: &Path, src: &str, n: usize, dst: &str) {
    let text = std::fs::read_to_string(dir.join(src)).unwrap();
    let rows: Vec<&str> = text.lines().take(n).collect();
    std::fs::write(dir.join(dst), rows.join("\n") + "\n").unwrap();
}

#[test]
fn usage_errors_exit_two() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let out = run(dir, &["calibrate", "--stat", "mmd", "--test-size", "5", "--out", "c.json"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--ref"));
    assert_eq!(run(dir, &["calibrate", "--ref", "r.csv", "--stat", "nope", "--test-size", "5", "--out", "c.json"]).status.code(), Some(2));
    assert_eq!(run(dir, &["frobnicate"]).status.code(), Some(2));
}

#[test]
fn missing_file_exits_one() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(tmp.path(), &["calibrate", "--ref", "absent.csv", "--stat", "mmd", "--test-size", "5", "--out", "c.json"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn constant_reference_reports_zero_variance() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    std::fs::write(dir.join("ref.csv"), "1.5,2\n".repeat(40)).unwrap();
    let out = run(
        dir,
        &["calibrate", "--ref", "ref.csv", "--stat", "wasserstein", "--test-size", "5", "--permutations", "30", "--out", "c.json"],
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("zero variance"));
    assert!(!dir.join("c.json").exists());
}

#[test]
fn calibration_file_layout_and_rerun() {
    let tmp = setup("partial-mmd-two-stage");
    let dir = tmp.path();
    let first = std::fs::read(dir.join("calib.json")).unwrap();
    let c = json(&first);
    for key in ["version", "spec", "sizes", "permutations", "seed", "null_samples", "fit", "reference_digest"] {
        assert!(c.get(key).is_some(), "missing {key}");
    }
    assert_eq!(c["sizes"]["n_ref"], 280);
    assert_eq!(c["sizes"]["n_test"], 20);
    assert_eq!(c["null_samples"].as_array().unwrap().len(), 60);
    assert_eq!(c["reference_digest"].as_str().unwrap().len(), 64);
    assert!((c["spec"]["alpha"].as_f64().unwrap() - 20.0 / 300.0).abs() < 1e-15);
    assert!(c["spec"]["lengthscale"].as_f64().unwrap() > 0.0);

    ok(
        dir,
        &["calibrate", "--ref", "ref.csv", "--stat", "partial-mmd-two-stage", "--test-size", "20", "--permutations", "60", "--seed", "5", "--out", "again.json"],
    );
    assert_eq!(std::fs::read(dir.join("again.json")).unwrap(), first);
}

#[test]
fn slice_of_reference_is_not_flagged() {
    let tmp = setup("mmd");
    let dir = tmp.path();
    head(dir, "ref.csv", 20, "batch.csv");
    let r = json(&ok(dir, &["score", "--calib", "calib.json", "--ref", "ref.csv", "--batch", "batch.csv"]));
    for key in ["statistic", "p_value", "empirical_p_value", "drift_detected"] {
        assert!(r.get(key).is_some(), "missing {key}");
    }
    assert_eq!(r["drift_detected"], false);
    assert!(r["p_value"].as_f64().unwrap() > 0.01);
    assert!(r.get("attribution").is_none());
}

#[test]
fn corrupted_batch_is_flagged() {
    let tmp = setup("partial-wasserstein");
    let dir = tmp.path();
    ok(dir, &["generate", "--n", "20", "--dim", "4", "--classes", "3", "--seed", "2", "--severity", "3", "--out", "batch.csv"]);
    let r = json(&ok(dir, &["score", "--calib", "calib.json", "--ref", "ref.csv", "--batch", "batch.csv"]));
    assert_eq!(r["drift_detected"], true);
}

#[test]
fn digest_mismatch_exits_one() {
    let tmp = setup("wasserstein");
    let dir = tmp.path();
    ok(dir, &["generate", "--n", "300", "--dim", "4", "--classes", "3", "--seed", "2", "--out", "other.csv"]);
    head(dir, "ref.csv", 20, "batch.csv");
    let out = run(dir, &["score", "--calib", "calib.json", "--ref", "other.csv", "--batch", "batch.csv"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("digest"));
}

#[test]
fn attribution_contributions_sum_to_statistic_power() {
    for stat in ["wasserstein", "partial-wasserstein"] {
        let tmp = setup(stat);
        let dir = tmp.path();
        ok(dir, &["generate", "--n", "20", "--dim", "4", "--classes", "3", "--seed", "8", "--severity", "1", "--out", "batch.csv"]);
        let r = json(&ok(dir, &["score", "--calib", "calib.json", "--ref", "ref.csv", "--batch", "batch.csv", "--attribute"]));
        let matches = r["attribution"]["matches"].as_array().unwrap();
        assert_eq!(matches.len(), 20);
        let total: f64 = matches.iter().map(|m| m["contribution"].as_f64().unwrap()).sum();
        let stat_p = r["statistic"].as_f64().unwrap().powi(2);
        assert!((total - stat_p).abs() <= 1e-6, "{stat}: {total} vs {stat_p}");
    }
}

#[test]
fn mmd_attribution_carries_witness() {
    let tmp = setup("partial-mmd-two-stage");
    let dir = tmp.path();
    head(dir, "ref.csv", 20, "batch.csv");
    let r = json(&ok(dir, &["score", "--calib", "calib.json", "--ref", "ref.csv", "--batch", "batch.csv", "--attribute"]));
    let a = &r["attribution"];
    assert_eq!(a["reference_weights"].as_array().unwrap().len(), 300);
    assert_eq!(a["witness"]["test"].as_array().unwrap().len(), 20);
}

#[test]
fn csv_and_binary_inputs_agree() {
    let tmp = setup("partial-wasserstein");
    let dir = tmp.path();
    let gen = ["generate", "--n", "20", "--dim", "4", "--classes", "3", "--seed", "4", "--severity", "1"];
    ok(dir, &[&gen[..], &["--out", "batch.csv"]].concat());
    ok(dir, &[&gen[..], &["--binary", "--out", "batch.bin"]].concat());
    let bin = std::fs::read(dir.join("batch.bin")).unwrap();
    assert_eq!(&bin[..4], b"DRF1");
    assert_eq!(bin.len(), 20 + 20 * 4 * 8);
    let score = |b: &str| json(&ok(dir, &["score", "--calib", "calib.json", "--ref", "ref.csv", "--batch", b]));
    assert_eq!(score("batch.csv")["statistic"], score("batch.bin")["statistic"]);
}

#[test]
fn export_matching_writes_coupling_csv() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    std::fs::write(dir.join("ref.csv"), "x\n0\n1\n2\n10\n").unwrap();
    std::fs::write(dir.join("batch.csv"), "0.1\n1.9\n").unwrap();
    let csv = String::from_utf8(ok(dir, &["export-matching", "--ref", "ref.csv", "--batch", "batch.csv"])).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("ref_index,test_index,mass,cost"));
    let rows: Vec<Vec<f64>> = lines.map(|l| l.split(',').map(|f| f.parse().unwrap()).collect()).collect();
    let dummy: f64 = rows.iter().filter(|r| r[1] == -1.0).map(|r| r[2]).sum();
    assert!((dummy - 0.5).abs() < 1e-12);
    let matched: Vec<(f64, f64)> = rows.iter().filter(|r| r[1] >= 0.0).map(|r| (r[0], r[1])).collect();
    assert_eq!(matched, vec![(0.0, 0.0), (2.0, 1.0)]);
}

#[test]
fn experiment_writes_one_entry_per_detector() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    std::fs::write(
        dir.join("exp.json"),
        r#"{"world": {"classes": 3, "dim": 4}, "n_reference": 150, "n_test": 15, "draws_per_condition": 6, "permutations": 30,
            "detectors": [{"kind": "mmd"}, {"kind": "partial-wasserstein"}, {"kind": "partial-mmd-qp"}]}"#,
    )
    .unwrap();
    ok(dir, &["experiment", "--config", "exp.json", "--out", "out"]);
    let r = json(&std::fs::read(dir.join("out/report.json")).unwrap());
    let names: Vec<&str> = r["detectors"].as_array().unwrap().iter().map(|d| d["name"].as_str().unwrap()).collect();
    assert_eq!(names.len(), 3);
    for name in &names {
        let roc = std::fs::read_to_string(dir.join(format!("out/roc-{name}.csv"))).unwrap();
        assert!(roc.starts_with("fpr,tpr\n"));
    }
    assert!(!dir.join("out/runtimes.json").exists());
}

#[test]
fn bad_thread_count_exits_two() {
    let tmp = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_driftbridge"))
        .current_dir(tmp.path())
        .env("DRIFTBRIDGE_THREADS", "many")
        .args(["generate", "--n", "3", "--out", "x.csv"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

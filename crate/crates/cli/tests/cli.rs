use std::path::{Path, PathBuf};
use std::process::Command;

use serde_json::Value;

fn wpot(cmd: &str, config: &Path, out: &Path, tasks: usize) -> i32 {
    Command::new(env!("CARGO_BIN_EXE_wpot"))
        .args([cmd, "--config"])
        .arg(config)
        .arg("--out")
        .arg(out)
        .args(["--tasks", &tasks.to_string()])
        .output()
        .expect("binary runs")
        .status
        .code()
        .expect("exit code")
}

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, body).unwrap();
    p
}

fn manifest(out: &Path) -> Value {
    serde_json::from_slice(&std::fs::read(out.join("manifest.json")).expect("manifest written")).unwrap()
}

fn shipped(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs").join(name)
}

#[test]
fn fekete_on_the_circle_writes_a_decreasing_normalized_column() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "c.json",
        r#"{"set": {"kind": "circle", "radius": 1.0, "resolution": 2520}, "k_range": [2, 4, 6, 8], "restarts": 0}"#,
    );
    let out = dir.path().join("out");
    assert_eq!(wpot("fekete", &cfg, &out, 1), 0);
    let csv = std::fs::read_to_string(out.join("fekete.csv")).unwrap();
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let col = header.iter().position(|h| *h == "normalized").unwrap();
    let vals: Vec<f64> = lines.map(|l| l.split(',').nth(col).unwrap().parse().unwrap()).collect();
    assert_eq!(vals.len(), 4);
    // 2520 is divisible by every N_k here, so equispaced N_k-gons are on the
    // grid and the normalized value is exactly (k+1)^{1/(2k)}.
    for (v, k) in vals.iter().zip([2.0f64, 4.0, 6.0, 8.0]) {
        assert!((v / (k + 1.0).powf(0.5 / k) - 1.0).abs() < 1e-6, "{v} at k = {k}");
    }
    let m = manifest(&out);
    assert_eq!(m["pass"], true);
    assert_eq!(m["command"], "fekete");
    assert!(m["artifact_files"].as_array().unwrap().iter().any(|f| f == "points.csv"));
}

#[test]
fn equilibrium_on_the_gue_config_matches_the_semicircle() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    assert_eq!(wpot("equilibrium", &shipped("gue_equilibrium.json"), &out, 1), 0);
    let csv = std::fs::read_to_string(out.join("equilibrium.csv")).unwrap();
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let (ix, ic) = (header.iter().position(|h| *h == "x").unwrap(), header.iter().position(|h| *h == "cdf").unwrap());
    let mut worst: f64 = 0.0;
    for l in lines {
        let f: Vec<&str> = l.split(',').collect();
        let x: f64 = f[ix].parse().unwrap();
        let c: f64 = f[ic].parse().unwrap();
        // Q = x^2/2: semicircle of radius sqrt(2).
        let r = 2f64.sqrt();
        let t = (x / r).clamp(-1.0, 1.0);
        let exact = 0.5 + (t * (1.0 - t * t).sqrt() + t.asin()) / std::f64::consts::PI;
        worst = worst.max((c - exact).abs());
    }
    assert!(worst < 0.02, "{worst}");
}

#[test]
fn sample_without_seed_is_a_config_error_and_still_writes_a_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "s.json", r#"{"set": {"kind": "interval_union", "intervals": [[-1, 1]], "resolution": 5}, "k": 2}"#);
    let out = dir.path().join("out");
    assert_eq!(wpot("sample", &cfg, &out, 1), 2);
    let m = manifest(&out);
    assert_eq!(m["pass"], false);
    assert_eq!(m["exit_code"], 2);
    assert!(m["error"].as_str().unwrap().contains("seed"));
}

#[test]
fn unknown_keys_and_bad_weights_are_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let a = write_config(dir.path(), "a.json", r#"{"set": {"kind": "circle", "radius": 1, "resolution": 8}, "k_max": 2, "colour": 1}"#);
    assert_eq!(wpot("fekete", &a, &out, 1), 2);
    let b = write_config(dir.path(), "b.json", r#"{"set": {"kind": "circle", "radius": 1, "resolution": 8}, "k_max": 2, "weight": "x^"}"#);
    assert_eq!(wpot("fekete", &b, &out, 1), 2);
    assert_eq!(wpot("fekete", &dir.path().join("missing.json"), &out, 1), 2);
}

#[test]
fn failed_check_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    // Three degrees is far too short a range for the growth test to call a
    // polynomially growing M_k bounded.
    let cfg = write_config(
        dir.path(),
        "b.json",
        r#"{"set": {"kind": "interval_union", "intervals": [[-1, 1]], "resolution": 50},
            "nu": {"construction": "arcsine", "points": 200}, "k_range": [2, 4, 6]}"#,
    );
    let out = dir.path().join("out");
    assert_eq!(wpot("bm", &cfg, &out, 1), 1);
    assert_eq!(manifest(&out)["pass"], false);
}

#[test]
fn identical_config_seed_and_tasks_give_identical_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = shipped("interval_sample.json");
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
    assert_eq!(wpot("sample", &cfg, &a, 2), 0);
    assert_eq!(wpot("sample", &cfg, &b, 2), 0);
    for f in ["samples.jsonl", "sample.json", "manifest.json"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    assert_eq!(wpot("sample", &cfg, &c, 1), 0);
    assert_eq!(manifest(&c)["tasks"], 1);
}

#[test]
fn zk_and_tdiam_run_on_small_sets() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "z.json",
        r#"{"set": {"kind": "interval_union", "intervals": [[-1, 1]], "resolution": 10}, "weight": "x^2", "k_range": [1, 2, 3]}"#,
    );
    let out = dir.path().join("z");
    assert_eq!(wpot("zk", &cfg, &out, 1), 0);
    assert!(std::fs::read_to_string(out.join("zk.csv")).unwrap().starts_with("k,N_k,log_Z_k,normalized\n"));
    let out = dir.path().join("t");
    assert_eq!(wpot("tdiam", &cfg, &out, 1), 0);
    let summary: Value = serde_json::from_slice(&std::fs::read(out.join("tdiam.json")).unwrap()).unwrap();
    assert!(summary["log_fit"].as_f64().unwrap() > 0.0);
}

#[test]
fn measure_files_are_read_relative_to_the_config() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("nu.json"), r#"{"atoms": [[-1,0],[-0.5,0],[0,0],[0.5,0],[1,0]], "masses": [0.2,0.2,0.2,0.2,0.2]}"#).unwrap();
    let cfg = write_config(
        dir.path(),
        "f.json",
        r#"{"set": {"kind": "interval_union", "intervals": [[-1, 1]], "resolution": 2},
            "nu": {"construction": "file", "path": "nu.json"}, "k": 1, "samples": 50, "seed": 5}"#,
    );
    let out = dir.path().join("out");
    assert_eq!(wpot("sample", &cfg, &out, 1), 0);
    let lines = std::fs::read_to_string(out.join("samples.jsonl")).unwrap();
    assert_eq!(lines.lines().count(), 50);
}

#[test]
fn ldp_verify_reports_named_checks() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "l.json",
        r#"{"set": {"kind": "interval_union", "intervals": [[-1, 1]], "resolution": 10}, "k_range": [2], "eps": 0.2, "samples": 200, "seed": 1, "targets": ["equilibrium"]}"#,
    );
    let out = dir.path().join("out");
    let code = wpot("ldp-verify", &cfg, &out, 1);
    let report: Value = serde_json::from_slice(&std::fs::read(out.join("ldp.json")).unwrap()).unwrap();
    assert!(report["config_hash"].as_str().unwrap().len() == 16);
    let checks = report["checks"].as_array().unwrap();
    assert!(checks.iter().any(|c| c["name"] == "rate_equilibrium"));
    assert!(code == 0 || code == 1);
}

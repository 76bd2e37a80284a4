use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use blipvar::EstimateReport;

fn demo() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("data/demo.csv")
}

fn blipvar(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_blipvar"))
        .args(args)
        .env_remove("BLIPVAR_SEED")
        .output()
        .expect("binary runs")
}

fn report(out: &Output) -> EstimateReport {
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("report JSON")
}

#[test]
fn estimate_json_has_documented_shape() {
    let d = demo();
    let out = blipvar(&["--seed", "3", "estimate", d.to_str().unwrap(), "--sqrt-vte", "--draws", "200000"]);
    let r = report(&out);
    assert_eq!(r.estimator, "cv-tmle");
    assert_eq!(r.n, 300);
    let names: Vec<&str> = r.rows.iter().map(|r| r.name.as_str()).collect();
    assert_eq!(names, ["ATE", "VTE", "sqrt(VTE)"]);
    let q = r.q_simultaneous.unwrap();
    assert!(q >= r.z_marginal);
    for row in &r.rows {
        if let (Some(lo), Some(slo)) = (row.lower, row.sim_lower) {
            assert!(slo <= lo && row.sim_upper.unwrap() >= row.upper.unwrap());
        }
    }
    let again: EstimateReport = serde_json::from_str(&serde_json::to_string(&r).unwrap()).unwrap();
    assert_eq!(again, r);
}

#[test]
fn known_constant_propensity_skips_the_g_fit() {
    let d = demo();
    let out = blipvar(&["estimate", d.to_str().unwrap(), "--known-g", "0.5", "--draws", "0", "--estimator", "tmle"]);
    let r = report(&out);
    assert!(r.q_simultaneous.is_none());
    let bad = blipvar(&["estimate", d.to_str().unwrap(), "--known-g", "1.5"]);
    assert_eq!(bad.status.code(), Some(3));
    let named = blipvar(&["estimate", d.to_str().unwrap(), "--known-g", "case1", "--draws", "0"]);
    assert_eq!(named.status.code(), Some(0));
}

#[test]
fn seed_falls_back_to_environment() {
    let d = demo();
    let args = ["estimate", d.to_str().unwrap(), "--draws", "100000"];
    let flag = blipvar(&[&["--seed", "11"], &args[..]].concat());
    let env = Command::new(env!("CARGO_BIN_EXE_blipvar"))
        .args(args)
        .env("BLIPVAR_SEED", "11")
        .output()
        .unwrap();
    assert_eq!(flag.stdout, env.stdout);
}

#[test]
fn exit_codes_follow_error_classes() {
    let missing = blipvar(&["estimate", "/nonexistent/file.csv"]);
    assert_eq!(missing.status.code(), Some(2));
    let d = demo();
    let column = blipvar(&["estimate", d.to_str().unwrap(), "--y", "outcome"]);
    assert_eq!(column.status.code(), Some(3));
    let alpha = blipvar(&["--alpha", "1.5", "quantile", "--rho", "0"]);
    assert_eq!(alpha.status.code(), Some(3));
    let usage = blipvar(&["check-eic", "--cases", "0"]);
    assert_eq!(usage.status.code(), Some(3));
    let no_matrix = blipvar(&["quantile"]);
    assert_eq!(no_matrix.status.code(), Some(3));
    let dir = tempfile::tempdir().unwrap();
    let corr = dir.path().join("corr.csv");
    std::fs::write(&corr, "1,2\n2,1\n").unwrap();
    let not_psd = blipvar(&["quantile", "--corr-file", corr.to_str().unwrap()]);
    assert_eq!(not_psd.status.code(), Some(4));
}

#[test]
fn quantile_command_values() {
    let q = |args: &[&str]| -> f64 {
        let out = blipvar(args);
        assert_eq!(out.status.code(), Some(0));
        let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
        v["q"].as_f64().unwrap()
    };
    assert!((q(&["quantile", "--rho", "1"]) - 1.960).abs() <= 0.005);
    assert!((q(&["quantile", "--rho", "0"]) - 2.2365).abs() <= 0.005);
    // (2Φ(q) − 1)² = 0.5
    assert!((q(&["--alpha", "0.5", "quantile", "--rho", "0"]) - 1.0518).abs() <= 0.005);
}

#[test]
fn check_eic_passes_and_detects_a_flipped_d2() {
    let ok = blipvar(&["check-eic", "--cases", "20"]);
    assert_eq!(ok.status.code(), Some(0));
    let flipped = blipvar(&["check-eic", "--cases", "20", "--inject-d2-sign-flip"]);
    assert_eq!(flipped.status.code(), Some(1));
    let v: serde_json::Value = serde_json::from_slice(&flipped.stdout).unwrap();
    assert!(!v["failures"].as_array().unwrap().is_empty());
    assert!(v["failures"][0]["probs"].is_array());
}

#[test]
fn simulate_smoke_and_schema_errors() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR"));
    let dir = tempfile::tempdir().unwrap();
    let smoke = root.join("configs/smoke.json");
    let out = blipvar(&["--out", dir.path().to_str().unwrap(), "simulate", smoke.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let raw = std::fs::read_to_string(dir.path().join("raw.csv")).unwrap();
    assert_eq!(raw.lines().count(), 2);
    let metrics = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    assert!(metrics.starts_with("estimator,n,var,bias,mse,coverage,skewness,reps_ok\n"));

    let broken = dir.path().join("broken.json");
    std::fs::write(&broken, r#"{"spec": {"kind": "case1"}, "estimators": [{"kind": "lr-plugin"}], "n_grid": [100], "seed": 1}"#)
        .unwrap();
    let out = blipvar(&["--out", dir.path().to_str().unwrap(), "simulate", broken.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("reps"));
}

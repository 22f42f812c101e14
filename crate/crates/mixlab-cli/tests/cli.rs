use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn mixlab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mixlab")).args(args).output().expect("binary runs")
}

fn write_config(dir: &Path, name: &str, body: &str) -> String {
    let path = dir.join(format!("{name}.toml"));
    fs::write(&path, body).unwrap();
    path.to_string_lossy().into_owned()
}

const SMALL_SCAN: &str = r#"name = "small-scan"
domain = "ball(0.65)"

[problem]
n = 3
s = 0.5
mu = 1.0

[grid]
m = 12

[scan]
points = 6
max_ratio = 1.5
"#;

#[test]
fn oracles_pass_with_seed_7() {
    let dir = tempfile::tempdir().unwrap();
    let out = mixlab(&["oracles", "--seed", "7", "--outdir", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let run = dir.path().join("oracles");
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(run.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 7);
    assert_eq!(manifest["passed"], true);
    let tols = manifest["tolerances"].as_array().unwrap();
    assert!(tols.iter().any(|t| t[0] == "oracle_abs" && t[1] == 1e-10));
    let csv = fs::read_to_string(run.join("result.csv")).unwrap();
    assert!(csv.starts_with("check,max_deviation,tolerance,passed\n"));
    assert!(!csv.contains(",false"));
    assert!(run.join("report.json").exists());
}

#[test]
fn order_outside_unit_interval_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "bad", &SMALL_SCAN.replace("s = 0.5", "s = 1.2"));
    let out = mixlab(&["eig", "--config", &cfg, "--outdir", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 6:") && err.contains("(0, 1)"), "{err}");
    assert!(!dir.path().join("small-scan").exists());
}

#[test]
fn input_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(mixlab(&["scaling"]).status.code(), Some(2));
    let cfg = write_config(dir.path(), "typo", &SMALL_SCAN.replace("m = 12", "m = 12\nspacing = 0.1"));
    let out = mixlab(&["eig", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 11:"));
    // p is required by the mountain-pass driver
    let cfg = write_config(dir.path(), "nop", SMALL_SCAN);
    assert_eq!(mixlab(&["mountain-pass", "--config", &cfg, "--outdir", dir.path().to_str().unwrap()]).status.code(), Some(2));
    assert_eq!(mixlab(&["eig", "--config", &cfg, "--m-override", "7"]).status.code(), Some(2));
}

#[test]
fn scan_across_lambda_1_changes_sign_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "scan", SMALL_SCAN);
    let csv = |sub: &str| {
        let root = dir.path().join(sub);
        let out = mixlab(&["quotient-scan", "--config", &cfg, "--outdir", root.to_str().unwrap()]);
        assert!(matches!(out.status.code(), Some(0 | 1)), "{}", String::from_utf8_lossy(&out.stderr));
        fs::read_to_string(root.join("small-scan/result.csv")).unwrap()
    };
    let first = csv("a");
    assert_eq!(first, csv("b"));
    let s: Vec<f64> = first.lines().skip(1).map(|l| l.split(',').nth(2).unwrap().parse().unwrap()).collect();
    assert_eq!(s.len(), 6);
    assert!(s[0] > 0.0 && *s.last().unwrap() < 0.0, "{s:?}");
}

#[test]
fn m_override_reaches_the_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let body = SMALL_SCAN.replace("n = 3", "n = 2");
    let cfg = write_config(dir.path(), "eig", &body);
    let out = mixlab(&["eig", "--config", &cfg, "--m-override", "16", "--outdir", dir.path().to_str().unwrap(), "--jobs", "2"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("small-scan/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["grid"]["m"], 16);
    assert_eq!(manifest["m_override"], 16);
    assert_eq!(manifest["config"]["domain"], "ball(0.65)");
    assert!(manifest["git_describe"].as_str().is_some_and(|s| !s.is_empty()));
}

//! End-to-end runs of the `motsim` binary.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn motsim(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_motsim")).arg("--out").arg(out).args(args).env_remove("MOTSIM_OUT_DIR").output().expect("binary runs")
}

fn ok(out: &Path, args: &[&str]) -> Output {
    let o = motsim(out, args);
    assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    o
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn theta_is_reproducible_and_worker_independent() {
    let dir = TempDir::new().unwrap();
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
    let args = ["simulate-theta", "--kappa-prime", "6", "--t-max", "2", "--seed", "9"];
    ok(&a, &args);
    ok(&b, &[&args[..], &["--workers", "1"]].concat());
    let theta = fs::read(a.join("theta.csv")).unwrap();
    assert_eq!(theta, fs::read(b.join("theta.csv")).unwrap());
    assert!(String::from_utf8_lossy(&theta).starts_with("t,theta,zero_touch"));
    ok(&c, &["simulate-theta", "--kappa-prime", "6", "--t-max", "2", "--seed", "10"]);
    assert_ne!(theta, fs::read(c.join("theta.csv")).unwrap());
}

#[test]
fn ppp_verify_reports_estimate_and_interval() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, "[verify.mating_ppp]\ngammas = [2.0]\npaths = 1000\ntol = 1.0\n").unwrap();
    let o = ok(dir.path(), &["verify", "--suite", "mating-ppp", "--config", cfg.to_str().unwrap(), "--seed", "1"]);
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.lines().any(|l| l.starts_with("PASS mating-ppp/")), "{stdout}");
    let report = json(&dir.path().join("report.json"));
    let check = &report["suites"][0]["checks"][0];
    let alpha = check["statistic"].as_f64().unwrap();
    let ci: Vec<f64> = check["ci"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    assert!(ci[0] <= alpha && alpha <= ci[1], "{alpha} outside {ci:?}");
    assert!(check["n"].as_u64().unwrap() > 0);
    assert_eq!(report["pass"], Value::Bool(true));
}

#[test]
fn failing_suite_exits_with_one() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, "[verify.loewner]\ndrivers = 2\nhorizon = 0.2\ntol = 0.0\n").unwrap();
    let o = motsim(dir.path(), &["verify", "--suite", "loewner", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stdout).contains("FAIL loewner/"));
    assert_eq!(json(&dir.path().join("report.json"))["pass"], Value::Bool(false));
}

#[test]
fn render_loops_alternate_orientation() {
    let dir = TempDir::new().unwrap();
    ok(dir.path(), &["render-loops", "--levels", "3", "--kappa-prime", "6", "--target", "0.05,-0.1", "--seed", "2"]);
    let loops = json(&dir.path().join("loops.json"));
    let cw: Vec<bool> = loops.as_array().unwrap().iter().map(|l| l["clockwise"].as_bool().unwrap()).collect();
    assert_eq!(cw.len(), 3);
    assert!(cw.windows(2).all(|w| w[0] != w[1]), "{cw:?}");
    let svg = fs::read_to_string(dir.path().join("loops.svg")).unwrap();
    assert_eq!(svg.matches("class=\"loop\"").count(), 3);
}

#[test]
fn replay_reproduces_artifacts() {
    let dir = TempDir::new().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    ok(&a, &["simulate-burgers", "--p", "0.3", "--n", "10000", "--trials", "3", "--seed", "4"]);
    ok(&b, &["replay", a.join("manifest.json").to_str().unwrap()]);
    let manifest = json(&a.join("manifest.json"));
    let artifacts = manifest["artifacts"].as_array().unwrap();
    assert_eq!(artifacts.len(), 3);
    for art in artifacts {
        let name = art["path"].as_str().unwrap();
        let bytes = fs::read(a.join(name)).unwrap();
        assert_eq!(bytes.len() as u64, art["bytes"].as_u64().unwrap());
        assert_eq!(bytes, fs::read(b.join(name)).unwrap(), "{name}");
    }
}

#[test]
fn excursion_respects_no_plot() {
    let dir = TempDir::new().unwrap();
    ok(dir.path(), &["simulate-excursion", "--epsilon", "0.2", "--no-plot", "--seed", "3"]);
    assert!(dir.path().join("path.csv").exists());
    assert!(json(&dir.path().join("ledger.json"))["jumps"].is_array());
    assert!(!dir.path().join("excursion.svg").exists());
}

#[test]
fn bad_input_exits_with_two() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, "[burgers]\np = 0.2\nunknown_key = 1\n").unwrap();
    let o = motsim(dir.path(), &["simulate-burgers", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
    let o = motsim(dir.path(), &["simulate-burgers", "--p", "1.5"]);
    assert_eq!(o.status.code(), Some(2));
    let o = motsim(dir.path(), &["simulate-excursion", "--epsilon", "0.7"]);
    assert_eq!(o.status.code(), Some(2));
}

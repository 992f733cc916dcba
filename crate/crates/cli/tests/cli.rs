use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn amsa(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_amsa"))
        .args(args)
        .output()
        .expect("spawn amsa")
}

fn config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs").join(name)
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn generate_then_validate() {
    let dir = tempfile::tempdir().unwrap();
    let problem = dir.path().join("problem.json");
    let out = amsa(&["generate", "--dims", "2,3", "--seed", "4", "--out", path_str(&problem)]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));

    let out = amsa(&["--quiet", "validate", path_str(&problem), "--grid-points", "20"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let report: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(report["assumptions"]["delta_hat"].as_f64().unwrap() > 0.0);
    assert_eq!(report["pass"], Value::Bool(true));
}

#[test]
fn generate_mfg_problem() {
    let out = amsa(&["generate", "--kind", "mfg", "--states", "4", "--actions", "2"]);
    assert_eq!(out.status.code(), Some(0));
    let doc: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(doc.is_object());
}

#[test]
fn run_is_reproducible_and_analyze_agrees() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config("nested_linear_n2.json");
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for (out, threads) in [(&a, "1"), (&b, "3")] {
        let res = amsa(&[
            "--quiet", "run", "--config", path_str(&cfg), "--seeds", "2", "--threads", threads, "--out",
            path_str(out),
        ]);
        assert!(res.status.code().is_some_and(|c| c <= 1), "{}", String::from_utf8_lossy(&res.stderr));
    }
    assert_eq!(fs::read(a.join("curves.csv")).unwrap(), fs::read(b.join("curves.csv")).unwrap());
    assert_eq!(fs::read(a.join("summary.json")).unwrap(), fs::read(b.join("summary.json")).unwrap());

    let summary: Value = serde_json::from_slice(&fs::read(a.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["seeds"]["count"], 2);
    let res = amsa(&["analyze", path_str(&a)]);
    assert_eq!(res.status.code(), Some(0));
    let fits: Value = serde_json::from_slice(&res.stdout).unwrap();
    for solver in ["amsa", "msa"] {
        let refit = fits[solver]["fit"]["slope"].as_f64().unwrap();
        let stored = summary[solver]["slope"].as_f64().unwrap();
        assert!((refit - stored).abs() < 1e-12, "{solver}: {refit} vs {stored}");
    }
}

#[test]
fn bundled_configs_parse() {
    for name in ["nested_linear_n2.json", "nested_linear_n3.json", "mfg.json"] {
        let text = fs::read_to_string(config(name)).unwrap();
        amsa::experiment::ExperimentConfig::from_json(&text).unwrap_or_else(|e| panic!("{name}: {e}"));
    }
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(amsa(&["run", "--no-such-flag"]).status.code(), Some(2));
    assert_eq!(amsa(&["run"]).status.code(), Some(2));
    assert_eq!(amsa(&["run", "--config", "/nonexistent/config.json"]).status.code(), Some(2));
}

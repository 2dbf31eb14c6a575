use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn fdmec(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fdmec")).args(args).output().unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn solve_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let ok = write(dir.path(), "ok.json", r#"{"scenario": {"user_count": 4, "rng_seed": 1}}"#);
    let out = fdmec(&["solve", &ok]);
    assert_eq!(out.status.code(), Some(0));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["scheme"], "proposed");

    let heavy = r#"{"scenario": {"user_count": 4, "rng_seed": 1, "task_bits_range": [4e7, 5e7]}}"#;
    let out = fdmec(&["solve", &write(dir.path(), "heavy.json", heavy)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("infeasible"));

    let bad = write(dir.path(), "bad.json", r#"{"scenario": {"user_count": 4}, "bogus": 1}"#);
    assert_eq!(fdmec(&["solve", &bad]).status.code(), Some(1));
    assert_eq!(fdmec(&["solve", "/nonexistent/x.json"]).status.code(), Some(1));
}

#[test]
fn run_is_deterministic_and_accounts_for_every_job() {
    let dir = tempfile::tempdir().unwrap();
    let spec = r#"{"kind": "sweep_T", "grid": [0.05, 0.1], "seeds": 3, "scenario": {"user_count": 4},
        "schemes": ["proposed", "oma_fd", "noma_hd"]}"#;
    let spec = write(dir.path(), "spec.json", spec);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for (out, workers) in [(&a, "1"), (&b, "3")] {
        let res = fdmec(&["run", &spec, "--out", out.to_str().unwrap(), "--workers", workers]);
        assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    }
    for name in ["runs.csv", "infeasible.csv", "summary.csv", "metadata.json", "schema.json", "plot.gp"] {
        let (x, y) = (fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap());
        if name != "metadata.json" {
            assert_eq!(x, y, "{name} differs between runs");
        }
    }
    // 2 points x 3 seeds x 3 schemes, one header line per file
    let lines = |name: &str| fs::read_to_string(a.join(name)).unwrap().lines().count() - 1;
    assert_eq!(lines("runs.csv") + lines("infeasible.csv"), 18);
}

#[test]
fn run_rejects_a_bad_spec() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write(dir.path(), "spec.json", r#"{"kind": "sweep_T", "grid": []}"#);
    let out = dir.path().join("out");
    assert_eq!(fdmec(&["run", &spec, "--out", out.to_str().unwrap()]).status.code(), Some(1));
}

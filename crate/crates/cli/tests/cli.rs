use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../core/fixtures")
        .join(name)
}

fn ciplan(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ciplan"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary runs")
}

fn report(out: &Path, name: &str) -> serde_json::Value {
    let text = std::fs::read_to_string(out.join(format!("{name}.json"))).unwrap();
    serde_json::from_str(&text).unwrap()
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn validate_accepts_the_fixtures() {
    let dir = tempfile::tempdir().unwrap();
    for name in ["coin2.json", "signal2.json"] {
        let f = fixture(name);
        let out = ciplan(dir.path(), &["validate", "--model", path_str(&f)]);
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
        assert_eq!(report(dir.path(), "validate")["valid"], true);
    }
}

#[test]
fn validate_names_a_short_transition_row() {
    let dir = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(fixture("coin2.json")).unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, text.replacen("0.9", "0.8", 1)).unwrap();
    let out = ciplan(dir.path(), &["validate", "--model", path_str(&bad)]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("transition[0][0][0]"), "{err}");
}

#[test]
fn solve_and_oracle_agree_on_coin2() {
    let dir = tempfile::tempdir().unwrap();
    let f = fixture("coin2.json");
    for args in [&["solve", "--alg", "1"][..], &["oracle"], &["solve", "--alg", "4"]] {
        let mut a = args.to_vec();
        a.extend(["--model", path_str(&f)]);
        assert_eq!(ciplan(dir.path(), &a).status.code(), Some(0));
    }
    let dp = report(dir.path(), "solve-alg1")["j"].as_f64().unwrap();
    let oracle = report(dir.path(), "oracle")["j"].as_f64().unwrap();
    let belief = report(dir.path(), "solve-alg4")["j"].as_f64().unwrap();
    assert!((dp - oracle).abs() < 1e-9);
    assert!((dp - belief).abs() < 1e-9);
}

#[test]
fn compressed_pipeline_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let f = fixture("signal2.json");
    let model = path_str(&f);
    let out = ciplan(d, &["compress", "--mode", "greedy", "--tol-r", "0.2", "--tol-o", "0.2", "--model", model]);
    assert_eq!(out.status.code(), Some(0));
    let (p, c) = (d.join("private.json"), d.join("common.json"));
    let with = |cmd: &[&str]| {
        let mut a = cmd.to_vec();
        a.extend(["--model", model, "--compression", path_str(&p), "--compression", path_str(&c)]);
        ciplan(d, &a)
    };
    assert_eq!(with(&["verify-gap"]).status.code(), Some(0));
    assert_eq!(report(d, "verify-gap")["pass"], true);
    assert_eq!(with(&["solve", "--alg", "3"]).status.code(), Some(0));
    assert_eq!(with(&["measure"]).status.code(), Some(0));
    // a lossy map is refused by the belief program over labels
    assert_eq!(with(&["solve", "--alg", "5"]).status.code(), Some(2));
    // too small a cap
    assert_eq!(with(&["verify-gap", "--budget", "10"]).status.code(), Some(3));
}

#[test]
fn conditions_hold_on_coin2() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let f = fixture("coin2.json");
    let model = path_str(&f);
    assert_eq!(ciplan(d, &["compress", "--mode", "exact", "--model", model]).status.code(), Some(0));
    let p = d.join("private.json");
    let c = d.join("common.json");
    let out = ciplan(
        d,
        &["check-conditions", "--model", model, "--compression", path_str(&p), "--compression", path_str(&c)],
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    let rep = report(d, "check-conditions");
    assert_eq!(rep["pass"], true);
    assert_eq!(rep["spi"]["conditions"].as_array().unwrap().len(), 4);
}

#[test]
fn input_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(ciplan(d, &["validate"]).status.code(), Some(2));
    assert_eq!(ciplan(d, &["validate", "--model", "/nonexistent.json"]).status.code(), Some(2));
    let f = fixture("coin2.json");
    assert_eq!(ciplan(d, &["solve", "--alg", "2", "--model", path_str(&f)]).status.code(), Some(2));
    let out = Command::new(env!("CARGO_BIN_EXE_ciplan"))
        .args(["validate", "--model", path_str(&f), "--out", path_str(d)])
        .env("CIPLAN_THREADS", "many")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn structured_stdout_is_the_report_file() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let f = fixture("signal2.json");
    let out = ciplan(d, &["solve", "--alg", "1", "--format", "structured", "--model", path_str(&f)]);
    assert_eq!(out.status.code(), Some(0));
    let file = std::fs::read(d.join("solve-alg1.json")).unwrap();
    assert_eq!(out.stdout, file);
}

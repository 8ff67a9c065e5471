use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn f1() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../models/f1.json")
}

fn riskjump(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_riskjump"))
        .args(args)
        .env("RISKJUMP_THREADS", "2")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn solve_into(dir: &Path) {
    let out = riskjump(&[
        "solve",
        "--model",
        f1().to_str().unwrap(),
        "--out",
        dir.to_str().unwrap(),
        "--nodes",
        "33",
        "--steps",
        "32",
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
}

#[test]
fn validate_accepts_the_example_model() {
    let dir = TempDir::new().unwrap();
    let out = riskjump(&[
        "validate",
        "--model",
        f1().to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert_eq!(stdout(&out).lines().filter(|l| l.starts_with("pass")).count(), 4);
    let report = json(&dir.path().join("validation.json"));
    assert_eq!(report["passed"], true);
}

#[test]
fn validate_rejects_one_sided_jumps() {
    let dir = TempDir::new().unwrap();
    let mut doc = json(&f1());
    doc["atoms"].as_array_mut().unwrap().remove(0);
    let path = dir.path().join("bad.json");
    fs::write(&path, doc.to_string()).unwrap();
    let out = riskjump(&["validate", "--model", path.to_str().unwrap()]);
    assert_eq!(code(&out), 1);
    let text = stdout(&out);
    assert!(
        text.lines().any(|l| l.starts_with("FAIL") && l.contains("both signs")),
        "{text}"
    );
}

#[test]
fn malformed_documents_are_invalid_input() {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("model.json");
    fs::write(&path, r#"{"n": 1}"#).unwrap();
    let out = riskjump(&["validate", "--model", path.to_str().unwrap()]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).starts_with("error:"));
}

#[test]
fn zero_beta_prints_the_money_market_rate() {
    let out = riskjump(&["zero-beta", "--model", f1().to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let value: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(value["h_check"][0], 0.0);
    assert!((value["g_check"].as_f64().unwrap() + 0.02).abs() < 1e-15);
}

#[test]
fn usage_errors_name_the_offending_field() {
    let model = f1();
    let model = model.to_str().unwrap();
    let cases: [(&[&str], &str); 5] = [
        (&["validate", "--model", "/nonexistent/model.json"], "--model"),
        (
            &["solve", "--model", model, "--out", "/tmp", "--nodes", "8"],
            "grid options",
        ),
        (
            &["solve", "--model", model, "--out", "/tmp", "--half-width", "x"],
            "--half-width",
        ),
        (
            &["simulate", "--model", model, "--out", "/tmp", "--constant", "1,2"],
            "--constant",
        ),
        (
            &["--format-version", "7", "zero-beta", "--model", model],
            "--format-version",
        ),
    ];
    for (args, field) in cases {
        let out = riskjump(args);
        assert_eq!(code(&out), 64, "{args:?}: {}", stderr(&out));
        assert!(stderr(&out).contains(field), "{args:?}: {}", stderr(&out));
    }
    let out = riskjump(&["solve", "--bogus"]);
    assert_eq!(code(&out), 64);
    assert!(stderr(&out).contains("--bogus"));
}

#[test]
fn thread_count_must_be_numeric() {
    let out = Command::new(env!("CARGO_BIN_EXE_riskjump"))
        .args(["zero-beta", "--model", f1().to_str().unwrap()])
        .env("RISKJUMP_THREADS", "many")
        .output()
        .unwrap();
    assert_eq!(code(&out), 64);
    assert!(stderr(&out).contains("RISKJUMP_THREADS"));
}

#[test]
fn solve_writes_one_row_per_node_and_time() {
    let dir = TempDir::new().unwrap();
    solve_into(dir.path());
    let csv = fs::read_to_string(dir.path().join("solution.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "t,x0,phi_tilde,phi,h0");
    assert_eq!(lines.count(), 33 * 33);
    let summary = json(&dir.path().join("summary.json"));
    assert_eq!(summary["model"]["n"], 1);
}

#[test]
fn simulate_replays_byte_for_byte() {
    let dir = TempDir::new().unwrap();
    let first = dir.path().join("first");
    let second = dir.path().join("second");
    let out = riskjump(&[
        "simulate",
        "--model",
        f1().to_str().unwrap(),
        "--out",
        first.to_str().unwrap(),
        "--paths",
        "500",
        "--seed",
        "11",
        "--constant",
        "0.5",
        "--paths-csv",
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let estimates = first.join("estimates.json");
    let out = riskjump(&[
        "simulate",
        "--replay",
        estimates.to_str().unwrap(),
        "--out",
        second.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert_eq!(
        fs::read(&estimates).unwrap(),
        fs::read(second.join("estimates.json")).unwrap()
    );
    assert_eq!(
        fs::read(first.join("paths.csv")).unwrap(),
        fs::read(second.join("paths.csv")).unwrap()
    );

    let report = json(&estimates);
    assert_eq!(report["config_hash"].as_str().unwrap().len(), 64);
    let names: Vec<&str> = report["records"]
        .as_array()
        .unwrap()
        .iter()
        .map(|r| r["estimator"].as_str().unwrap())
        .collect();
    assert!(names.contains(&"changed_measure"), "{names:?}");
}

#[test]
fn simulate_follows_a_stored_solution() {
    let dir = TempDir::new().unwrap();
    let solution = dir.path().join("solution");
    solve_into(&solution);
    let out = riskjump(&[
        "simulate",
        "--model",
        f1().to_str().unwrap(),
        "--solution",
        solution.to_str().unwrap(),
        "--out",
        dir.path().join("mc").to_str().unwrap(),
        "--paths",
        "300",
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
}

#[test]
fn verify_passes_a_fresh_solution_and_flags_a_corrupted_one() {
    let dir = TempDir::new().unwrap();
    let solution = dir.path().join("solution");
    solve_into(&solution);
    let report_dir = dir.path().join("verify");
    let out = riskjump(&[
        "verify",
        "--solution",
        solution.to_str().unwrap(),
        "--out",
        report_dir.to_str().unwrap(),
        "--paths",
        "4000",
    ]);
    assert_eq!(code(&out), 0, "{}{}", stdout(&out), stderr(&out));
    assert_eq!(json(&report_dir.join("verify.json"))["passed"], true);

    let csv_path = solution.join("solution.csv");
    let csv = fs::read_to_string(&csv_path).unwrap();
    let mut lines: Vec<String> = csv.lines().map(str::to_string).collect();
    let mut cells: Vec<String> = lines[1].split(',').map(str::to_string).collect();
    cells[2] = "-0.5".into();
    lines[1] = cells.join(",");
    fs::write(&csv_path, lines.join("\n") + "\n").unwrap();
    let out = riskjump(&[
        "verify",
        "--solution",
        solution.to_str().unwrap(),
        "--out",
        report_dir.to_str().unwrap(),
        "--paths",
        "500",
    ]);
    assert_eq!(code(&out), 3, "{}{}", stdout(&out), stderr(&out));
    let report = json(&report_dir.join("verify.json"));
    assert_eq!(report["passed"], false);
    let integrity = report["checks"]
        .as_array()
        .unwrap()
        .iter()
        .find(|c| c["name"] == "solution_integrity")
        .unwrap();
    assert_eq!(integrity["passed"], false);
}

#[test]
fn filter_demo_writes_its_artifacts() {
    let dir = TempDir::new().unwrap();
    let out = riskjump(&[
        "filter-demo",
        "--model",
        f1().to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
        "--paths",
        "1000",
    ]);
    assert_eq!(code(&out), 0, "{}{}", stdout(&out), stderr(&out));
    let report = json(&dir.path().join("filter_report.json"));
    assert_eq!(report["passed"], true);
    assert!(report["step_halving_gap"].as_f64().unwrap() < 1e-8);
    let reduced = json(&dir.path().join("reduced_model.json"));
    assert!(reduced.get("Lambda_eff").is_some());
    let rows = fs::read_to_string(dir.path().join("filter.csv"))
        .unwrap()
        .lines()
        .count();
    assert_eq!(rows, 1 + 201);

    let out = riskjump(&[
        "validate",
        "--model",
        dir.path().join("reduced_model.json").to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", stdout(&out));
}

#[test]
fn filter_demo_refuses_a_factor_dependent_rate() {
    let dir = TempDir::new().unwrap();
    let mut doc = json(&f1());
    doc["A0"] = serde_json::json!([0.1]);
    let path = dir.path().join("f1b.json");
    fs::write(&path, doc.to_string()).unwrap();
    let out = riskjump(&[
        "filter-demo",
        "--model",
        path.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 1, "{}", stderr(&out));
}

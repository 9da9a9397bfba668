use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn toy(name: &str, file: &str) -> String {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../data")
        .join(name)
        .join(file)
        .to_string_lossy()
        .into_owned()
}

fn selrt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_selrt"))
        .args(args)
        .env_remove("SELRT_THREADS")
        .output()
        .expect("binary runs")
}

fn ok_json(args: &[&str]) -> Value {
    let out = selrt(args);
    assert!(
        out.status.success(),
        "{args:?} exited {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn error_of(out: &Output) -> Value {
    let line = String::from_utf8_lossy(&out.stderr);
    assert_eq!(line.trim().lines().count(), 1, "{line}");
    serde_json::from_str(line.trim()).expect("stderr is one JSON object")
}

fn with_toy<'a>(spec: &'a str, data: &'a str, rest: &[&'a str]) -> Vec<&'a str> {
    let mut args = vec!["--spec", spec, "--data", data];
    args.extend_from_slice(rest);
    args
}

#[test]
fn missing_spec_is_a_usage_error() {
    let data = toy("enrichment_toy", "data.csv");
    let out = selrt(&["test", "--data", &data, "--tau", "0"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_of(&out)["error"], "UsageError");
}

#[test]
fn unknown_sampler_is_a_usage_error() {
    let (spec, data) = (
        toy("enrichment_toy", "spec.json"),
        toy("enrichment_toy", "data.csv"),
    );
    let mut args = vec!["test"];
    args.extend(with_toy(
        &spec,
        &data,
        &["--tau", "0", "--sampler", "gibbs"],
    ));
    assert_eq!(selrt(&args).status.code(), Some(2));
}

#[test]
fn malformed_spec_exits_four() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.json");
    std::fs::write(&spec, "{\"stages\": []}").unwrap();
    let data = toy("enrichment_toy", "data.csv");
    let out = selrt(&[
        "test",
        "--spec",
        spec.to_str().unwrap(),
        "--data",
        &data,
        "--tau",
        "0",
    ]);
    assert_eq!(out.status.code(), Some(4));
    assert_eq!(error_of(&out)["error"], "SpecParseError");
}

#[test]
fn mismatched_data_exits_three() {
    let spec = toy("enrichment_toy", "spec.json");
    let data = toy("crd_toy", "data.csv");
    let out = selrt(&["test", "--spec", &spec, "--data", &data, "--tau", "0"]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn exact_test_on_the_toy() {
    let (spec, data) = (
        toy("enrichment_toy", "spec.json"),
        toy("enrichment_toy", "data.csv"),
    );
    let mut args = vec!["test"];
    args.extend(with_toy(
        &spec,
        &data,
        &["--tau", "0", "--sampler", "exact"],
    ));
    let v = ok_json(&args);
    assert!(
        (v["estimate"].as_f64().unwrap() - 1.0 / 6.0).abs() < 1e-12,
        "{v}"
    );
    assert_eq!(v["test"], "selective");
}

#[test]
fn ci_writes_the_p_curve() {
    let (spec, data) = (
        toy("enrichment_toy", "spec.json"),
        toy("enrichment_toy", "data.csv"),
    );
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().to_str().unwrap();
    let mut args = vec!["ci"];
    args.extend(with_toy(
        &spec,
        &data,
        &[
            "--tau-grid",
            "-2:3:0.25",
            "--sampler",
            "exact",
            "--out-dir",
            out_dir,
        ],
    ));
    let v = ok_json(&args);
    assert_eq!(v["alpha"], 0.1);
    assert!(v["intervals"].as_array().is_some());
    let csv = std::fs::read_to_string(dir.path().join("p_curve.csv")).unwrap();
    assert_eq!(csv.lines().count(), 22);
}

#[test]
fn estimate_reports_a_point() {
    let (spec, data) = (
        toy("enrichment_toy", "spec.json"),
        toy("enrichment_toy", "data.csv"),
    );
    let mut args = vec!["estimate"];
    args.extend(with_toy(
        &spec,
        &data,
        &["--tau-grid", "-2:3:0.05", "--sampler", "exact"],
    ));
    let v = ok_json(&args);
    assert!(v["estimate"].as_f64().is_some(), "{v}");
}

#[test]
fn validate_and_tune_window_on_the_toy() {
    let (spec, data) = (
        toy("enrichment_toy", "spec.json"),
        toy("enrichment_toy", "data.csv"),
    );
    let mut args = vec!["validate"];
    args.extend(with_toy(&spec, &data, &[]));
    ok_json(&args);
    let mut args = vec!["tune-window"];
    args.extend(with_toy(
        &spec,
        &data,
        &["--windows", "1,2,4", "--pilot-length", "500"],
    ));
    ok_json(&args);
}

fn read_dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (
                e.file_name().to_string_lossy().into_owned(),
                std::fs::read(e.path()).unwrap(),
            )
        })
        .collect();
    files.sort();
    files
}

#[test]
fn studies_run_and_are_thread_independent() {
    let runs: [&[&str]; 4] = [
        &[
            "simulate",
            "--replications",
            "6",
            "--samples",
            "200",
            "--tau-grid",
            "-0.4:0.4:0.4",
        ],
        &["coverage", "--replications", "4", "--samples", "200"],
        &["holdout", "--datasets", "4", "--tau-grid", "-1:2:0.1"],
        &["placebo", "--trials", "3", "--samples", "200"],
    ];
    for args in runs {
        let mut outputs = Vec::new();
        for threads in ["1", "3"] {
            let dir = tempfile::tempdir().unwrap();
            let mut full = vec!["--threads", threads];
            full.extend_from_slice(args);
            full.extend(["--out-dir", dir.path().to_str().unwrap()]);
            let out = selrt(&full);
            assert!(
                out.status.success(),
                "{full:?}: {}",
                String::from_utf8_lossy(&out.stderr)
            );
            let files = read_dir_bytes(dir.path());
            assert!(!files.is_empty(), "{args:?} wrote nothing");
            outputs.push((out.stdout, files));
        }
        assert!(
            outputs[0] == outputs[1],
            "{args:?} depends on the thread count"
        );
    }
}

#[test]
fn test_output_is_thread_independent() {
    let (spec, data) = (
        toy("enrichment_toy", "spec.json"),
        toy("enrichment_toy", "data.csv"),
    );
    let mut seen = Vec::new();
    for threads in ["1", "4"] {
        let mut args = vec!["--threads", threads, "test"];
        args.extend(with_toy(
            &spec,
            &data,
            &["--tau", "0.5", "--sampler", "rejection"],
        ));
        seen.push(selrt(&args).stdout);
    }
    assert_eq!(seen[0], seen[1]);
}

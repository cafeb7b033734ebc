use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use ppn::cli::analysis_outputs;
use ppn::engine::run_ensemble;
use ppn::scenario::Scenario;

fn ppn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ppn"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn run_then_analyze_matches_in_memory_analysis() {
    let dir = tempfile::tempdir().unwrap();
    let out = ppn(&[
        "run",
        "--scenario",
        "chain5-topdown",
        "--runs",
        "2",
        "--end-time",
        "0.005",
        "--out",
        path(dir.path()),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    for f in ["config.toml", "run_000.csv", "run_001.csv", "messages_000.csv", "summary.txt"] {
        assert!(dir.path().join(f).exists(), "{f} missing");
    }

    let out = ppn(&["analyze", "--out", path(dir.path()), "--t-end", "0.004"]);
    assert!(out.status.success(), "{}", stderr(&out));

    let mut scenario = Scenario::builtin("chain5-topdown").unwrap();
    scenario.config.n_runs = 2;
    scenario.config.end_time = 0.005;
    let traces = run_ensemble(&scenario.config).unwrap();
    let expected = analysis_outputs(&traces, 0.004, ppn::analysis::DEFAULT_WINDOW).unwrap();
    assert_eq!(expected.len(), 4);
    for (name, contents) in expected {
        let written = fs::read_to_string(dir.path().join("analysis").join(&name)).unwrap();
        assert_eq!(written, contents, "{name} differs");
    }
}

#[test]
fn written_config_reproduces_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let first = dir.path().join("a");
    let second = dir.path().join("b");
    let args = |out: &Path, scenario: &str| {
        ppn(&[
            "run",
            "--scenario",
            scenario,
            "--runs",
            "1",
            "--end-time",
            "0.002",
            "--seed",
            "7",
            "--out",
            path(out),
        ])
    };
    assert!(args(&first, "trimesh9-mixed").status.success());
    let config = first.join("config.toml");
    let out = args(&second, path(&config));
    assert!(out.status.success(), "{}", stderr(&out));
    assert_eq!(
        fs::read(first.join("run_000.csv")).unwrap(),
        fs::read(second.join("run_000.csv")).unwrap()
    );
}

#[test]
fn plot_format_writes_svg() {
    let dir = tempfile::tempdir().unwrap();
    let out = ppn(&[
        "run",
        "--scenario",
        "chain5-bottomup",
        "--runs",
        "1",
        "--end-time",
        "0.002",
        "--format",
        "plot",
        "--out",
        path(dir.path()),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let svgs = fs::read_dir(dir.path())
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "svg"))
        .count();
    assert!(svgs > 0);
}

#[test]
fn zero_end_time_writes_the_initial_sample() {
    let dir = tempfile::tempdir().unwrap();
    let out = ppn(&[
        "run",
        "--scenario",
        "chain5-topdown",
        "--runs",
        "1",
        "--end-time",
        "0",
        "--out",
        path(dir.path()),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let trace = ppn::trace_io::read_trace_file(&dir.path().join("run_000.csv")).unwrap();
    assert_eq!(trace.len(), 1);
    assert_eq!(trace.times, vec![0.0]);
}

#[test]
fn malformed_scenario_names_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("bad.toml");
    fs::write(&file, "[graph]\nbuiltin = \"chain5\"\n\n[run]\nend_time = \"long\"\n").unwrap();
    let out = ppn(&["run", "--scenario", path(&file), "--out", path(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("run.end_time"), "{}", stderr(&out));

    let out = ppn(&["run", "--scenario", "no-such-scenario"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn analyze_rejects_out_of_range_end_point_and_bad_window() {
    let dir = tempfile::tempdir().unwrap();
    let run = ppn(&[
        "run",
        "--scenario",
        "chain5-topdown",
        "--runs",
        "1",
        "--end-time",
        "0.001",
        "--out",
        path(dir.path()),
    ]);
    assert!(run.status.success());

    let out = ppn(&["analyze", "--out", path(dir.path()), "--t-end", "0.5"]);
    assert_eq!(out.status.code(), Some(2));
    let err = stderr(&out);
    assert!(err.contains("0.5") && err.contains("0.001"), "{err}");

    let out = ppn(&["analyze", "--out", path(dir.path()), "--window", "0"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("window"));

    let empty = tempfile::tempdir().unwrap();
    let out = ppn(&["analyze", "--out", path(empty.path())]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn invalid_overrides_are_rejected() {
    let out = ppn(&["run", "--scenario", "chain5-topdown", "--runs", "0"]);
    assert_eq!(out.status.code(), Some(2));
    let out = ppn(&["run", "--scenario", "chain5-topdown", "--message-latency-ticks", "0"]);
    assert_eq!(out.status.code(), Some(2));
    let out = ppn(&["run", "--scenario", "chain5-topdown", "--format", "pdf"]);
    assert!(!out.status.success());
}

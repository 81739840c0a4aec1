use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn xrd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_xrd")).args(args).output().unwrap()
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn sample() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/sample16.toml")
}

#[test]
fn params_reports_lengths_and_sizes() {
    let out = xrd(&["params", "--f", "0.2", "--n", "6000"]);
    assert_eq!(out.status.code(), Some(0));
    let text = stdout(&out);
    assert!(text.contains("chain length k (exact) = 33"), "{text}");
    assert!(text.contains("published reference) = 32, delta = 1"), "{text}");
    assert!(text.contains("ell = 110"), "{text}");
}

#[test]
fn params_omits_delta_off_the_published_point() {
    let out = xrd(&["params", "--f", "0.1", "--n", "6000"]);
    assert_eq!(out.status.code(), Some(0));
    let text = stdout(&out);
    assert!(text.contains("k (exact) = 24"), "{text}");
    assert!(!text.contains("delta"), "{text}");
}

#[test]
fn invalid_arguments_exit_with_two() {
    assert_eq!(xrd(&["params", "--f", "1.2", "--n", "6000"]).status.code(), Some(2));
    assert_eq!(xrd(&["run", "--config", "/nonexistent.toml", "--out", "/tmp/x"]).status.code(), Some(2));
    assert_eq!(xrd(&["attack", "--mode", "bogus", "--trials", "1"]).status.code(), Some(2));
}

#[test]
fn run_writes_outputs_deterministically() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let cfg = sample();
    for dir in [&a, &b] {
        let out = xrd(&["run", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    }
    for file in ["report.csv", "detections.csv", "config.toml", "rounds.jsonl"] {
        let x = std::fs::read(a.path().join(file)).unwrap();
        let y = std::fs::read(b.path().join(file)).unwrap();
        assert_eq!(x, y, "{file} differs");
    }
    let report = std::fs::read_to_string(a.path().join("report.csv")).unwrap();
    let mut rows = csv::Reader::from_reader(report.as_bytes());
    let headers = rows.headers().unwrap().clone();
    let failed = headers.iter().position(|h| h == "failed_conversations").unwrap();
    let row = rows.records().next().unwrap().unwrap();
    assert_eq!(&row[failed], "0");
}

#[test]
fn epoch_runs_several_rounds() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = sample();
    let out = xrd(&[
        "epoch", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap(), "--rounds", "3",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let lines = std::fs::read_to_string(dir.path().join("rounds.jsonl")).unwrap();
    assert_eq!(lines.lines().count(), 3);
}

#[test]
fn availability_tracks_closed_form() {
    let out = xrd(&["availability", "--q", "0.01", "--k", "32", "--trials", "5000", "--seed", "3"]);
    assert_eq!(out.status.code(), Some(0));
    let text = stdout(&out);
    let frac: f64 = text.split("failure fraction ").nth(1).unwrap().split_whitespace().next().unwrap().parse().unwrap();
    assert!((frac - 0.2750).abs() < 0.03, "{text}");
}

#[test]
fn attack_mode_writes_tables() {
    let dir = tempfile::tempdir().unwrap();
    let out = xrd(&["attack", "--mode", "tamper_replace", "--trials", "2", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let table = std::fs::read_to_string(dir.path().join("attack.csv")).unwrap();
    assert!(table.contains("tamper_replace"));
    let trials = std::fs::read_to_string(dir.path().join("attack_trials.jsonl")).unwrap();
    assert_eq!(trials.lines().count(), 2);
}

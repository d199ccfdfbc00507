use std::path::Path;
use std::process::{Command, Output};

fn cli(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cloud-lmpc"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

#[test]
fn run_writes_tables_plots_and_store() {
    let dir = tempfile::tempdir().unwrap();
    let out = cli(
        &[
            "run",
            "--tasks",
            "6",
            "--mode",
            "both",
            "--out-dir",
            "out",
            "--cloud-out",
            "store.jsonl",
        ],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let root = dir.path().join("out");
    for file in ["baselines.csv", "comparison.csv"] {
        assert!(root.join(file).is_file(), "{file}");
    }
    for mode in ["cloud_based", "isolated"] {
        for file in [
            "metrics.csv",
            "solves.csv",
            "pedestrian_trace.csv",
            "cost_vs_repetition.svg",
            "gap_moving_average.svg",
            "pedestrian_position.svg",
        ] {
            assert!(root.join(mode).join(file).is_file(), "{mode}/{file}");
        }
    }
    let metrics = std::fs::read_to_string(root.join("cloud_based/metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 7);

    // the store written by one run seeds the next
    let again = cli(
        &["run", "--tasks", "3", "--out-dir", "out2", "--cloud-in", "store.jsonl"],
        dir.path(),
    );
    assert!(again.status.success(), "{}", String::from_utf8_lossy(&again.stderr));
}

#[test]
fn validate_reports_every_seed() {
    let dir = tempfile::tempdir().unwrap();
    let out = cli(&["validate"], dir.path());
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("48/48 seeds valid"));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let missing = cli(&["validate", "--config", "nope.toml"], dir.path());
    assert_eq!(missing.status.code(), Some(3));

    std::fs::write(dir.path().join("bad.toml"), "[fleet]\nagnets = 2\n").unwrap();
    let unknown = cli(&["validate", "--config", "bad.toml"], dir.path());
    assert_eq!(unknown.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&unknown.stderr).contains("agnets"));

    let mode = cli(&["run", "--mode", "cloud"], dir.path());
    assert_eq!(mode.status.code(), Some(1));

    let store = cli(&["run", "--tasks", "1", "--cloud-in", "missing.jsonl"], dir.path());
    assert_eq!(store.status.code(), Some(3));
}

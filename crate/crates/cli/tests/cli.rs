//! End-to-end tests of the `rscf` binary.

use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

const SMALL: &[&str] = &[
    "--set",
    "n_realizations=3",
    "--set",
    "n_err=4",
    "--set",
    "snr_grid_db=0,5,10",
];

fn rscf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rscf"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn run_into(dir: &Path, extra: &[&str]) -> Output {
    let out = dir.to_str().unwrap();
    let mut args = vec!["run", "--out", out];
    args.extend_from_slice(SMALL);
    args.extend_from_slice(extra);
    rscf(&args)
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn run_writes_one_row_per_scheme_and_snr() {
    let dir = TempDir::new().unwrap();
    let o = run_into(dir.path(), &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read_to_string(dir.path().join("results.csv")).unwrap();
    let mut lines = csv.lines();
    let header = lines.next().unwrap();
    assert!(header.starts_with("scheme,snr_db,esr"));
    let rows: Vec<&str> = lines.collect();
    let schemes: std::collections::BTreeSet<&str> =
        rows.iter().map(|r| r.split(',').next().unwrap()).collect();
    assert_eq!(rows.len(), 3 * schemes.len());
    assert!(dir.path().join("trials.jsonl").exists());
}

#[test]
fn results_are_identical_across_runs_and_worker_counts() {
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    assert!(run_into(a.path(), &["--workers", "1"]).status.success());
    assert!(run_into(b.path(), &["--workers", "3"]).status.success());
    let read = |d: &TempDir| std::fs::read(d.path().join("results.csv")).unwrap();
    assert_eq!(read(&a), read(&b));
}

#[test]
fn seed_flag_changes_results() {
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    assert!(run_into(a.path(), &["--seed", "1"]).status.success());
    assert!(run_into(b.path(), &["--seed", "2"]).status.success());
    let read = |d: &TempDir| std::fs::read(d.path().join("results.csv")).unwrap();
    assert_ne!(read(&a), read(&b));
}

#[test]
fn config_file_is_overridden_by_set_pairs() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("exp.cfg");
    std::fs::write(&cfg, "# test\nM = 10\nK = 3\n").unwrap();
    let o = rscf(&[
        "--config",
        cfg.to_str().unwrap(),
        "--set",
        "K=5",
        "--print-config",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.lines().any(|l| l == "M = 10"));
    assert!(text.lines().any(|l| l == "K = 5"));
}

#[test]
fn unknown_key_is_a_config_error() {
    let o = rscf(&["run", "--set", "bogus=1"]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.contains("bogus"));
    assert!(err.contains("sigma_e2"));
}

#[test]
fn invalid_value_is_a_config_error() {
    let o = rscf(&["run", "--set", "M=2", "--set", "K=4"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn missing_subcommand_is_a_config_error() {
    assert_eq!(rscf(&[]).status.code(), Some(1));
}

#[test]
fn verify_passes_and_detects_corruption() {
    let ok = rscf(&["verify", "--instances", "20"]);
    assert_eq!(
        ok.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&ok.stdout)
    );
    let bad = rscf(&["verify", "--instances", "20", "--corrupt-zf"]);
    assert_eq!(bad.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&bad.stdout).contains("FAIL"));
}

#[test]
fn sweep_writes_one_directory_per_value() {
    let dir = TempDir::new().unwrap();
    let mut args = vec![
        "sweep", "--key", "sigma_e2", "--value", "0", "--value", "0.1", "--out",
    ];
    args.push(dir.path().to_str().unwrap());
    args.extend_from_slice(SMALL);
    let o = rscf(&args);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(dir.path().join("sigma_e2=0/results.csv").exists());
    assert!(dir.path().join("sigma_e2=0.1/results.csv").exists());
    let csv = std::fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    assert!(csv.starts_with("sweep_key,sweep_value,scheme"));
}

#[test]
fn sweep_rejects_unknown_key() {
    let dir = TempDir::new().unwrap();
    let o = rscf(&[
        "sweep",
        "--key",
        "nope",
        "--value",
        "1",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn cluster_report_prints_a_partition() {
    let o = rscf(&["cluster-report", "--out", "-", "--seed", "7"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["seed"], 7);
    let clusters = v["clusters"].as_array().unwrap();
    assert_eq!(clusters.len() as u64, v["n_clusters"].as_u64().unwrap());
    let mut users: Vec<u64> = clusters
        .iter()
        .flat_map(|c| {
            c["users"]
                .as_array()
                .unwrap()
                .iter()
                .map(|u| u.as_u64().unwrap())
        })
        .collect();
    users.sort_unstable();
    assert_eq!(users, vec![0, 1, 2, 3]);
}

use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn dipo(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dipo"))
        .args(args)
        .current_dir(dir)
        .env_remove("DIPO_OUTPUT_ROOT")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const SMALL: &[&str] = &["--steps", "12", "--num-tasks", "12", "--batch-groups", "12", "--eval-every", "5"];

fn train(dir: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["train"];
    args.extend_from_slice(SMALL);
    args.extend_from_slice(extra);
    dipo(dir, &args)
}

#[test]
fn train_writes_run_directory() {
    let tmp = TempDir::new().unwrap();
    let out = train(tmp.path(), &["--output-dir", "runs"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let run = tmp.path().join("runs/dipo-seed0");
    assert_eq!(stdout(&out).trim(), "runs/dipo-seed0");
    for f in ["runlog.jsonl", "config.toml", "summary.csv", "policy.json"] {
        assert!(run.join(f).is_file(), "missing {f}");
    }
    let log = std::fs::read_to_string(run.join("runlog.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 12);
}

#[test]
fn overrides_are_recorded_in_resolved_config() {
    let tmp = TempDir::new().unwrap();
    std::fs::write(tmp.path().join("base.toml"), "alpha = 0.5\nseed = 3\n").unwrap();
    let out = train(tmp.path(), &["--config", "base.toml", "--alpha", "0", "--set", "eta=50", "--name", "x"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let resolved = std::fs::read_to_string(tmp.path().join("runs/x/config.toml")).unwrap();
    assert!(resolved.contains("alpha = 0.0"), "{resolved}");
    assert!(resolved.contains("eta = 50.0"));
    assert!(resolved.contains("seed = 3"));
}

#[test]
fn resolved_config_reproduces_the_run() {
    let tmp = TempDir::new().unwrap();
    let first = train(tmp.path(), &["--seed", "9", "--name", "a"]);
    assert!(first.status.success(), "{}", stderr(&first));
    let again = dipo(tmp.path(), &["train", "--config", "runs/a/config.toml", "--name", "b"]);
    assert!(again.status.success(), "{}", stderr(&again));
    let a = std::fs::read(tmp.path().join("runs/a/runlog.jsonl")).unwrap();
    let b = std::fs::read(tmp.path().join("runs/b/runlog.jsonl")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn output_root_from_environment() {
    let tmp = TempDir::new().unwrap();
    let mut args = vec!["train"];
    args.extend_from_slice(SMALL);
    let out = Command::new(env!("CARGO_BIN_EXE_dipo"))
        .args(&args)
        .current_dir(tmp.path())
        .env("DIPO_OUTPUT_ROOT", "elsewhere")
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(tmp.path().join("elsewhere/dipo-seed0/runlog.jsonl").is_file());
}

#[test]
fn missing_config_fails_without_output() {
    let tmp = TempDir::new().unwrap();
    let out = train(tmp.path(), &["--config", "absent.toml"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("absent.toml"));
    assert!(!tmp.path().join("runs").exists());
}

#[test]
fn invalid_field_is_named() {
    let tmp = TempDir::new().unwrap();
    let out = train(tmp.path(), &["--group-size", "1"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("group_size"));
    let out = train(tmp.path(), &["--set", "no_such_key=1"]);
    assert_eq!(out.status.code(), Some(1));
    let out = train(tmp.path(), &["--set", "alpha"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!tmp.path().join("runs").exists());
}

#[test]
fn unwritable_output_is_a_runtime_error() {
    let tmp = TempDir::new().unwrap();
    std::fs::write(tmp.path().join("blocker"), "").unwrap();
    let out = train(tmp.path(), &["--output-dir", "blocker"]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
}

#[test]
fn entropy_check_directions() {
    let tmp = TempDir::new().unwrap();
    for mode in ["reward", "penalty"] {
        let out = dipo(tmp.path(), &["entropy-check", "--mode", mode, "--steps", "300"]);
        assert_eq!(out.status.code(), Some(0), "{mode}: {}", stderr(&out));
        let rho: f64 = stdout(&out).trim().strip_prefix("spearman ").unwrap().parse().unwrap();
        assert!(if mode == "reward" { rho >= 0.9 } else { rho <= -0.9 }, "{rho}");
    }
    let out = dipo(tmp.path(), &["entropy-check", "--mode", "reward", "--eta", "0", "--steps", "20"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(stdout(&out).contains("undefined"));
}

#[test]
fn oracle_compare_agrees_and_detects_faults() {
    let tmp = TempDir::new().unwrap();
    let out = dipo(tmp.path(), &["oracle-compare", "--snapshots", "1000"]);
    assert_eq!(out.status.code(), Some(0), "{}", stdout(&out));
    let text = stdout(&out);
    assert!(text.contains("mismatches 0 / 1000"));
    assert!(text.contains("empty snapshot: fast InsufficientData, brute force InsufficientData"));

    let out = dipo(tmp.path(), &["oracle-compare", "--snapshots", "50", "--inject-fault"]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn export_writes_four_csvs_deterministically() {
    let tmp = TempDir::new().unwrap();
    assert!(train(tmp.path(), &["--name", "r"]).status.success());
    let run = tmp.path().join("runs/r");
    let out = dipo(tmp.path(), &["export", "runs/r"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let names = ["group_proportions.csv", "ppl_hist.csv", "entropy.csv", "tau.csv"];
    let first: Vec<Vec<u8>> = names.iter().map(|n| std::fs::read(run.join(n)).unwrap()).collect();
    for bytes in &first {
        assert_eq!(String::from_utf8_lossy(bytes).lines().count(), 13);
    }
    for line in String::from_utf8_lossy(&first[0]).lines().skip(1) {
        let sum: f64 = line.split(',').skip(1).map(|v| v.parse::<f64>().unwrap()).sum();
        assert!((sum - 1.0).abs() < 1e-9);
    }
    assert!(dipo(tmp.path(), &["export", "runs/r"]).status.success());
    let second: Vec<Vec<u8>> = names.iter().map(|n| std::fs::read(run.join(n)).unwrap()).collect();
    assert_eq!(first, second);
}

#[test]
fn export_without_run_log_fails() {
    let tmp = TempDir::new().unwrap();
    std::fs::create_dir(tmp.path().join("empty")).unwrap();
    let out = dipo(tmp.path(), &["export", "empty"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn tau_never_selected_is_reported() {
    let tmp = TempDir::new().unwrap();
    // n_min larger than any window can satisfy
    assert!(train(tmp.path(), &["--n-min", "100000", "--name", "t"]).status.success());
    assert!(dipo(tmp.path(), &["export", "runs/t"]).status.success());
    let tau = std::fs::read_to_string(tmp.path().join("runs/t/tau.csv")).unwrap();
    assert!(tau.lines().skip(1).all(|l| !l.ends_with("Selected")));
}

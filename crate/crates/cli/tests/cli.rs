use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};

fn small_config(dir: &Path) -> PathBuf {
    let cfg = json!({
        "name": "tiny",
        "model": {"kind": "mm1k", "capacity": 6},
        "simulate": {
            "theta_star": [4.0],
            "train": {"windows": 6, "load": [2, 3]},
            "test": {"windows": 4, "load": [4, 6]},
            "window_length": 5,
            "seed": 1
        },
        "observe": {"states": [0, 1]},
        "optimizer": {"engine": "infsgd", "epochs": 3, "eta0": 0.05, "batch_size": 1},
        "evaluate": {"replicates": 2}
    });
    write_config(dir, "tiny.json", &cfg)
}

fn write_config(dir: &Path, name: &str, cfg: &Value) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, serde_json::to_string_pretty(cfg).unwrap()).unwrap();
    path
}

fn cli(args: &[&str]) -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_ctmc-learn"));
    c.args(args).env_remove("CTMC_LEARN_OUT_DIR");
    c
}

fn run(args: &[&str]) -> Output {
    cli(args).output().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn run_prints_six_significant_digits() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let out = run(&["run", s(&cfg), "--out-dir", s(&tmp.path().join("out"))]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().count(), 3, "{text}");
    for token in text.split(|c: char| c == '=' || c.is_whitespace() || c == '[' || c == ']') {
        if let Ok(v) = token.parse::<f64>() {
            let digits = token
                .trim_start_matches('-')
                .split('e')
                .next()
                .unwrap()
                .replace('.', "");
            let significant = digits.trim_start_matches('0').len();
            assert!(
                significant <= 6,
                "`{token}` ({v}) has more than 6 significant digits"
            );
        }
    }
    assert!(tmp.path().join("out/tiny/summary.json").exists());
}

#[test]
fn staged_commands_match_a_single_run() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let staged = tmp.path().join("staged");
    for cmd in ["simulate", "fit", "evaluate"] {
        let out = run(&[cmd, s(&cfg), "--out-dir", s(&staged)]);
        assert!(
            out.status.success(),
            "{cmd}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
    }
    let whole = tmp.path().join("whole");
    assert!(run(&["run", s(&cfg), "--out-dir", s(&whole)])
        .status
        .success());
    for f in [
        "summary.json",
        "manifest.json",
        "rep_1/theta.csv",
        "rep_0/trajectory.csv",
    ] {
        assert_eq!(
            std::fs::read(staged.join("tiny").join(f)).unwrap(),
            std::fs::read(whole.join("tiny").join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn env_var_sets_default_out_dir_and_quiet_silences_stdout() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let out_dir = tmp.path().join("from_env");
    let out = cli(&["run", s(&cfg), "--quiet"])
        .env("CTMC_LEARN_OUT_DIR", &out_dir)
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(out.stdout.is_empty());
    assert!(out_dir.join("tiny/manifest.json").exists());
}

#[test]
fn seed_flag_overrides_config_seeds() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let out = tmp.path().join("out");
    assert!(
        run(&["simulate", s(&cfg), "--out-dir", s(&out), "--seed", "42"])
            .status
            .success()
    );
    let m: Value =
        serde_json::from_slice(&std::fs::read(out.join("tiny/manifest.json")).unwrap()).unwrap();
    assert_eq!(m["seeds"]["simulate"], 42);
    assert_eq!(m["seeds"]["optimizer"], 42);
    assert_eq!(m["config"]["simulate"]["seed"], 42);
    // Fitting under a different seed would mix runs; the manifest check refuses.
    let refit = run(&["fit", s(&cfg), "--out-dir", s(&out)]);
    assert_eq!(refit.status.code(), Some(1));
    assert!(run(&["fit", s(&cfg), "--out-dir", s(&out), "--seed", "42"])
        .status
        .success());
}

#[test]
fn config_errors_exit_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = write_config(
        tmp.path(),
        "bad.json",
        &json!({"name": "x", "model": {"kind": "mm1k", "capacity": 3, "colour": 1}}),
    );
    let out = run(&["run", s(&bad), "--out-dir", s(tmp.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("model"));
    let missing = run(&["run", s(&tmp.path().join("nope.json"))]);
    assert_eq!(missing.status.code(), Some(2));
}

#[test]
fn missing_stage_inputs_exit_with_one() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let out = run(&[
        "evaluate",
        s(&cfg),
        "--out-dir",
        s(&tmp.path().join("empty")),
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn sweep_writes_one_run_per_value() {
    let tmp = tempfile::tempdir().unwrap();
    let path = small_config(tmp.path());
    let mut cfg: Value = serde_json::from_slice(&std::fs::read(&path).unwrap()).unwrap();
    cfg["sweep"] = json!({"path": "optimizer.p", "values": [0.1, 0.01]});
    cfg["evaluate"]["replicates"] = json!(1);
    let path = write_config(tmp.path(), "sweep.json", &cfg);
    let out_dir = tmp.path().join("out");
    let out = run(&["sweep", s(&path), "--out-dir", s(&out_dir)]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(out_dir.join("tiny/p=0.1/rep_0/trajectory.csv").exists());
    assert!(out_dir.join("tiny/p=0.01/rep_0/trajectory.csv").exists());
    assert_eq!(
        std::fs::read_to_string(out_dir.join("tiny/sweep.csv"))
            .unwrap()
            .lines()
            .count(),
        3
    );
    let no_sweep = run(&[
        "sweep",
        s(&small_config(tmp.path())),
        "--out-dir",
        s(&out_dir),
    ]);
    assert_eq!(no_sweep.status.code(), Some(2));
}

//! End-to-end checks of the `uavcr` binary: artifacts on disk, exit codes,
//! and cross-invocation determinism.

use std::path::Path;
use std::process::{Command, Output};

fn uavcr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_uavcr"))
        .args(args)
        .output()
        .expect("binary runs")
}

/// Tiny network so train invocations finish in well under a second.
const TINY: &[&str] = &[
    "--set",
    "dgn.hidden_dim=8",
    "--set",
    "dgn.num_heads=2",
    "--set",
    "dgn.key_dim=4",
    "--set",
    "dgn.warmup_transitions=30",
    "--set",
    "dgn.batch_size=8",
];

#[test]
fn generate_writes_scenario_files() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("gen");
    let r = uavcr(&[
        "generate",
        "--count",
        "3",
        "--seed",
        "5",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    for k in 0..3 {
        assert!(out.join(format!("scenario_{k:03}.json")).exists());
    }
    let stdout = String::from_utf8_lossy(&r.stdout);
    assert!(stdout.contains("3/3 scenarios pass validation"), "{stdout}");
}

#[test]
fn generate_is_deterministic_across_invocations() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let r = uavcr(&["generate", "--count", "2", "--seed", "9", "--out", out.to_str().unwrap()]);
        assert!(r.status.success());
    }
    for k in 0..2 {
        let name = format!("scenario_{k:03}.json");
        assert_eq!(
            std::fs::read(a.join(&name)).unwrap(),
            std::fs::read(b.join(&name)).unwrap()
        );
    }
}

fn train_tiny(out: &Path, seed: &str, episodes: &str) -> Output {
    let mut args = vec![
        "train", "--episodes", episodes, "--seed", seed, "--out",
        out.to_str().unwrap(),
    ];
    args.extend_from_slice(TINY);
    uavcr(&args)
}

#[test]
fn train_then_evaluate_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let train_out = dir.path().join("train");
    let r = train_tiny(&train_out, "3", "2");
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let ckpt = train_out.join("checkpoint.ckpt");
    assert!(ckpt.exists());
    assert!(train_out.join("metrics.csv").exists());

    let eval_out = dir.path().join("eval");
    let mut args = vec![
        "evaluate",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--episodes",
        "2",
        "--seed",
        "3",
        "--out",
        eval_out.to_str().unwrap(),
        "--trajectories",
    ];
    args.extend_from_slice(TINY);
    let r = uavcr(&args);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    assert!(eval_out.join("episodes.csv").exists());
    assert!(eval_out.join("trajectories.csv").exists());
    assert!(eval_out.join("report.json").exists());
}

#[test]
fn baseline_writes_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("base");
    let r = uavcr(&["baseline", "--episodes", "2", "--seed", "4", "--out", out.to_str().unwrap()]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let report = std::fs::read_to_string(out.join("report.json")).unwrap();
    let v: serde_json::Value = serde_json::from_str(&report).unwrap();
    assert!(v["report"]["episodes"].as_u64() == Some(2));
}

#[test]
fn invalid_config_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    // Unknown config key.
    let r = uavcr(&[
        "train",
        "--set",
        "dgn.no_such_knob=1",
        "--out",
        dir.path().join("x").to_str().unwrap(),
    ]);
    assert_eq!(r.status.code(), Some(2), "{}", String::from_utf8_lossy(&r.stderr));

    // Semantically invalid value.
    let r = uavcr(&[
        "train",
        "--set",
        "scenario.t_loss=1.0",
        "--out",
        dir.path().join("y").to_str().unwrap(),
    ]);
    assert_eq!(r.status.code(), Some(2), "{}", String::from_utf8_lossy(&r.stderr));

    // Too few agents for training.
    let r = uavcr(&["train", "--agents", "1", "--out", dir.path().join("z").to_str().unwrap()]);
    assert_eq!(r.status.code(), Some(2));
}

#[test]
fn runtime_failure_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let r = uavcr(&[
        "evaluate",
        "--checkpoint",
        "/nonexistent/weights.ckpt",
        "--out",
        dir.path().join("x").to_str().unwrap(),
    ]);
    assert_eq!(r.status.code(), Some(3), "{}", String::from_utf8_lossy(&r.stderr));
}

#[test]
fn train_metrics_deterministic_across_processes() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert!(train_tiny(&a, "77", "3").status.success());
    assert!(train_tiny(&b, "77", "3").status.success());
    assert_eq!(
        std::fs::read(a.join("metrics.csv")).unwrap(),
        std::fs::read(b.join("metrics.csv")).unwrap()
    );
}

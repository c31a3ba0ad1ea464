use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn ifassist(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ifassist"))
        .args(args)
        .output()
        .unwrap()
}

fn small_sweep(out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![
        "sweep",
        "--out",
        out.to_str().unwrap(),
        "--trials",
        "20",
        "--n-turns",
        "1,2",
        "--lambda-i",
        "0.1,0.7",
        "--lambda-m",
        "0.3",
    ];
    args.extend_from_slice(extra);
    ifassist(&args)
}

#[test]
fn sweep_then_summarize() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let res = small_sweep(&out, &["--seed", "4"]);
    assert!(
        res.status.success(),
        "{}",
        String::from_utf8_lossy(&res.stderr)
    );
    for f in ["config.json", "trials.jsonl", "trials.csv", "cells.csv"] {
        assert!(out.join(f).exists(), "missing {f}");
    }
    let header = std::fs::read_to_string(out.join("trials.csv")).unwrap();
    assert!(header.starts_with("trial_id,assistance,n_turns,lambda_i,lambda_m,steps,mode_switches,success,dist_xy,dist_theta"));
    let config: Value =
        serde_json::from_slice(&std::fs::read(out.join("config.json")).unwrap()).unwrap();
    assert_eq!(config["base_seed"], 4);
    assert_eq!(config["trials_per_cell"], 20);

    let res = ifassist(&["summarize", "--in", out.to_str().unwrap()]);
    assert!(
        res.status.success(),
        "{}",
        String::from_utf8_lossy(&res.stderr)
    );
    let stdout = String::from_utf8(res.stdout).unwrap();
    assert!(stdout.contains("lambda_i=0.1 lambda_m=0.3"), "{stdout}");
    let summary: Value =
        serde_json::from_slice(&std::fs::read(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["cells"].as_array().unwrap().len(), 2 * 3 * 2);
    assert!(summary["report"]["rankings"].is_array());
}

#[test]
fn identical_reruns() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert!(small_sweep(&a, &[]).status.success());
    assert!(small_sweep(&b, &[]).status.success());
    for f in ["trials.jsonl", "trials.csv", "cells.csv", "config.json"] {
        assert_eq!(
            std::fs::read(a.join(f)).unwrap(),
            std::fs::read(b.join(f)).unwrap(),
            "{f} differs"
        );
    }
}

#[test]
fn config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, r#"{"trials_per_cell": 5, "unknown_field": 1}"#).unwrap();
    let out = dir.path().join("run");
    let res = ifassist(&[
        "sweep",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(
        res.status.code(),
        Some(2),
        "{}",
        String::from_utf8_lossy(&res.stderr)
    );

    std::fs::write(&cfg, r#"{"epsilon": 1.5}"#).unwrap();
    let res = ifassist(&[
        "sweep",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(res.status.code(), Some(2));

    let res = small_sweep(&out, &["--lambda-m", "1.5"]);
    assert_eq!(res.status.code(), Some(2));
    assert!(!out.join("trials.jsonl").exists());
}

#[test]
fn calibrate_fit_from_logs() {
    let dir = tempfile::tempdir().unwrap();
    let p2 = dir.path().join("phase2.jsonl");
    let mut lines = String::new();
    for _ in 0..9 {
        lines
            .push_str(r#"{"phase":2,"prompt":"soft_puff","response":"soft_puff","latency_s":1.0}"#);
        lines.push('\n');
    }
    lines.push_str(r#"{"phase":2,"prompt":"soft_puff","response":"hard_puff","latency_s":1.2}"#);
    lines.push('\n');
    lines.push_str(r#"{"phase":2,"prompt":"hard_sip","response":"timeout","latency_s":5.0}"#);
    lines.push('\n');
    std::fs::write(&p2, lines).unwrap();
    let out = dir.path().join("tables.json");
    let res = ifassist(&[
        "calibrate-fit",
        "--phase2",
        p2.to_str().unwrap(),
        "--alpha",
        "1",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(
        res.status.success(),
        "{}",
        String::from_utf8_lossy(&res.stderr)
    );
    let tables: Value = serde_json::from_slice(&std::fs::read(&out).unwrap()).unwrap();
    let row = &tables["distortion"]["soft_puff"];
    assert!((row["soft_puff"].as_f64().unwrap() - 10.0 / 14.0).abs() < 1e-12);
    assert!((row["hard_puff"].as_f64().unwrap() - 2.0 / 14.0).abs() < 1e-12);
    assert_eq!(tables["distortion"]["hard_sip"]["hard_sip"], 0.25);
    assert_eq!(
        tables["internal_mapping"]["mode_switch_cw"]["hard_puff"],
        1.0
    );
    let stdout = String::from_utf8(res.stdout).unwrap();
    assert!(stdout.contains("phase2 accuracy"), "{stdout}");

    let res = ifassist(&[
        "calibrate-fit",
        "--phase1",
        p2.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(!res.status.success());
}

#[test]
fn replay_missing_session_fails() {
    let dir = tempfile::tempdir().unwrap();
    let res = ifassist(&[
        "replay",
        "--data-dir",
        dir.path().to_str().unwrap(),
        "--session",
        "nope",
    ]);
    assert!(!res.status.success());
}

use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn mavic(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mavic")).args(args).output().unwrap()
}

fn summary(out: &Output) -> Value {
    let stdout = String::from_utf8_lossy(&out.stdout);
    let last = stdout.lines().last().unwrap_or_else(|| panic!("no output; stderr: {}", String::from_utf8_lossy(&out.stderr)));
    serde_json::from_str(last).unwrap()
}

fn small_config(dir: &Path) -> String {
    let config = serde_json::json!({
        "env": "chain",
        "env_config": { "penalty": 20.0 },
        "epochs": 12,
        "episodes_per_epoch": 8,
        "updates_per_epoch": 2,
        "batch_size": 32,
        "hidden": [8],
        "arrival_prob": 0.5,
        "eval_every": 4,
        "eval_episodes": 5,
        "experiment": { "seeds": [0, 1], "modes": ["mavic", "vanilla"], "compliance_episodes": 10, "probe_episodes": 2 },
    });
    let path = dir.join("small.json");
    std::fs::write(&path, config.to_string()).unwrap();
    path.display().to_string()
}

#[test]
fn verify_reports_the_decoupling_deviation() {
    let config = concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/chain.json");
    let out = mavic(&["verify", "--config", config]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let s = summary(&out);
    assert_eq!(s["command"], "verify");
    assert!(s["lemma1_max_dev"].as_f64().unwrap() <= 1e-6);
    assert!(s["instances"].as_u64().unwrap() >= 21);
}

#[test]
fn unknown_subcommand_prints_usage_and_exits_one() {
    let out = mavic(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
    let out = mavic(&["train", "--no-such-flag"]);
    assert_eq!(out.status.code(), Some(1));
    let out = mavic(&["train", "--mode", "greedy"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn missing_config_exits_one_with_the_path() {
    let out = mavic(&["train", "--config", "/definitely/missing/run.json"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("/definitely/missing/run.json"));
    let s = summary(&out);
    assert_eq!(s["status"], "error");
    assert_eq!(s["exit_code"], 1);
}

#[test]
fn invalid_config_values_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    std::fs::write(&path, r#"{"env": "chain", "epochs": 0}"#).unwrap();
    assert_eq!(mavic(&["train", "--config", path.to_str().unwrap()]).status.code(), Some(1));
    std::fs::write(&path, r#"{"env": "chain", "learning_rate": 0.1}"#).unwrap();
    assert_eq!(mavic(&["train", "--config", path.to_str().unwrap()]).status.code(), Some(1));
    std::fs::write(&path, r#"{"experiment": {"seeds": [1, 1]}}"#).unwrap();
    assert_eq!(mavic(&["eval", "--config", path.to_str().unwrap()]).status.code(), Some(1));
    std::fs::write(&path, "{ not json").unwrap();
    assert_eq!(mavic(&["verify", "--config", path.to_str().unwrap()]).status.code(), Some(1));
}

#[test]
fn runtime_failures_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("broken.jsonl");
    std::fs::write(&trace, "{\"t\": \"zero\"}\n").unwrap();
    let out = mavic(&["replay", trace.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn training_twice_gives_identical_logs() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_config(dir.path());
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        let o = mavic(&["train", "--config", &config, "--mode", "mavic", "--seed", "1", "--out", out.to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let read = |d: &Path, f: &str| std::fs::read(d.join(f)).unwrap();
    assert_eq!(read(&a, "metrics.jsonl"), read(&b, "metrics.jsonl"));
    assert_eq!(read(&a, "checkpoint.json"), read(&b, "checkpoint.json"));
    let metrics = String::from_utf8(read(&a, "metrics.jsonl")).unwrap();
    assert_eq!(metrics.lines().count(), 3);
    let first: Value = serde_json::from_str(metrics.lines().next().unwrap()).unwrap();
    assert_eq!(first["seed"], 1);
    assert_eq!(first["mode"], "mavic");
}

#[test]
fn experiment_writes_every_report_and_replays_its_traces() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_config(dir.path());
    let out = dir.path().join("exp");
    let o = mavic(&["eval", "--config", &config, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["results.csv", "compliance.csv", "action_hist.csv", "metrics.jsonl"] {
        assert!(out.join(f).is_file(), "{f}");
    }
    let results = std::fs::read_to_string(out.join("results.csv")).unwrap();
    assert_eq!(results.lines().count(), 3);
    let trace = out.join("traces").join("mavic_seed0_ep0.jsonl");
    let r = mavic(&["replay", "--config", &config, trace.to_str().unwrap()]);
    assert_eq!(r.status.code(), Some(0));
    let s = summary(&r);
    assert_eq!(s["roundtrip_exact"], true);
    assert!(s["steps"].as_u64().unwrap() > 0);

    let checkpoint = out.join("runs").join("vanilla_seed1").join("checkpoint.json");
    let eval_out = dir.path().join("single");
    let e = mavic(&["eval", "--config", &config, "--checkpoint", checkpoint.to_str().unwrap(), "--out", eval_out.to_str().unwrap()]);
    assert_eq!(e.status.code(), Some(0), "{}", String::from_utf8_lossy(&e.stderr));
    assert_eq!(summary(&e)["mode"], "vanilla");
}

#[test]
fn sweep_writes_a_csv() {
    let dir = tempfile::tempdir().unwrap();
    let out = mavic(&["sweep", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let s = summary(&out);
    assert!(s["contaminated"].as_u64().unwrap() >= 1);
    assert_eq!(s["corrected_attains_both_everywhere"], true);
    assert!(dir.path().join("sweep.csv").is_file());
}

#[test]
fn checkpoint_for_another_env_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_config(dir.path());
    let out = dir.path().join("t");
    assert_eq!(mavic(&["train", "--config", &config, "--out", out.to_str().unwrap()]).status.code(), Some(0));
    let bp = dir.path().join("bp.json");
    std::fs::write(&bp, r#"{"env": "box_pushing"}"#).unwrap();
    let cp = out.join("checkpoint.json");
    let o = mavic(&["eval", "--config", bp.to_str().unwrap(), "--checkpoint", cp.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1), "{}", String::from_utf8_lossy(&o.stderr));
}

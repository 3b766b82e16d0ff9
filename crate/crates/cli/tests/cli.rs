use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn tabmoe(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tabmoe"))
        .args(args)
        .current_dir(dir)
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) {
    let out = tabmoe(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn linear(dir: &Path) {
    ok(dir, &["synth", "--kind", "linear", "--n", "300", "--features", "3", "--seed", "5", "--out", "data"]);
}

fn config(dir: &Path, models: &str, budget: usize, seeds: usize, mc: &str) {
    let text = format!(
        r#"{{"dataset": "data/manifest.json", "models": {models}, "budget": {budget}, "space": "desk",
            "seeds": {{"count": {seeds}, "base": 0}}, "mc_compare": {mc},
            "training": {{"batch_size": 64, "patience": 3, "max_epochs": 8, "clip_norm": 1.0}},
            "out": "out"}}"#
    );
    fs::write(dir.join("run.json"), text).unwrap();
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn tune_logs_one_line_per_trial_and_reruns_identically() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    linear(dir);
    config(dir, r#"[{"family": "mlp"}]"#, 2, 1, "[]");
    ok(dir, &["tune", "--config", "run.json"]);
    let log = dir.join("out/tune/mlp/trials.jsonl");
    let first = fs::read(&log).unwrap();
    assert_eq!(first.iter().filter(|&&b| b == b'\n').count(), 2);
    ok(dir, &["tune", "--config", "run.json", "--workers", "2"]);
    assert_eq!(first, fs::read(&log).unwrap());
}

#[test]
fn invalid_manifest_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    fs::create_dir(dir.join("data")).unwrap();
    fs::write(dir.join("data/manifest.json"), r#"{"name": "broken", "task": "ranking"}"#).unwrap();
    config(dir, r#"[{"family": "mlp"}]"#, 1, 1, "[]");
    assert_eq!(tabmoe(dir, &["tune", "--config", "run.json"]).status.code(), Some(2));
}

#[test]
fn unknown_config_key_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("run.json"), r#"{"dataset": "x", "models": [], "colour": 1}"#).unwrap();
    assert_eq!(tabmoe(tmp.path(), &["tune", "--config", "run.json"]).status.code(), Some(2));
}

#[test]
fn benchmark_without_tuning_exits_3_naming_the_model() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    linear(dir);
    config(dir, r#"[{"family": "moe"}]"#, 1, 1, "[]");
    let out = tabmoe(dir, &["benchmark", "--config", "run.json"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).to_lowercase().contains("moe"));
}

#[test]
fn rank_without_results_exits_3() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(tabmoe(tmp.path(), &["rank", "--out", "nowhere"]).status.code(), Some(3));
}

#[test]
fn identical_entries_share_rank_one_with_zero_spread() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    linear(dir);
    config(dir, r#"[{"family": "mlp"}, {"family": "mlp"}]"#, 1, 1, "[]");
    ok(dir, &["tune", "--config", "run.json"]);
    ok(dir, &["benchmark", "--config", "run.json"]);
    let summaries = json(&dir.join("out/benchmark/summaries.json"));
    let summaries = summaries.as_array().unwrap();
    assert_eq!(summaries.len(), 2);
    assert_eq!(summaries[0]["mean"], summaries[1]["mean"]);
    for s in summaries {
        assert_eq!(s["std"].as_f64(), Some(0.0));
    }
    let rank = json(&dir.join("out/benchmark/rank.json"));
    for e in rank["entries"].as_array().unwrap() {
        assert_eq!(e["rank"], 1);
    }

    // rank recomputes from the stored summaries without a config
    ok(dir, &["rank", "--out", "out"]);
    assert_eq!(rank, json(&dir.join("out/rank/rank.json")));
}

#[test]
fn gumbel_model_reports_each_sample_count() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    linear(dir);
    config(dir, r#"[{"family": "ggmoe"}]"#, 1, 2, "[1, 10]");
    ok(dir, &["tune", "--config", "run.json"]);
    ok(dir, &["benchmark", "--config", "run.json"]);
    let mc = json(&dir.join("out/benchmark/mc_compare.json"));
    let (_, rows) = mc.as_object().unwrap().iter().next().unwrap();
    let ids: Vec<&str> = rows.as_array().unwrap().iter().map(|r| r["model_id"].as_str().unwrap()).collect();
    assert_eq!(ids, ["GG MoE", "GG MoE (mc=1)"]);
}

#[test]
fn divergent_targets_exit_4_and_keep_the_log() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    fs::create_dir(dir.join("data")).unwrap();
    let mut csv = String::from("x,y\n");
    for i in 0..60 {
        csv.push_str(&format!("{},{}\n", i as f64 / 60.0, if i % 2 == 0 { "1e308" } else { "-1e308" }));
    }
    fs::write(dir.join("data/data.csv"), csv).unwrap();
    fs::write(
        dir.join("data/manifest.json"),
        r#"{"name": "huge", "task": "regression", "columns": [{"name": "x", "kind": "numeric"}, {"name": "y", "kind": "target"}],
            "files": {"single": "data.csv"}, "split": {"ratios": [0.6, 0.2, 0.2], "seed": 0}}"#,
    )
    .unwrap();
    config(dir, r#"[{"family": "mlp"}]"#, 2, 1, "[]");
    assert_eq!(tabmoe(dir, &["tune", "--config", "run.json"]).status.code(), Some(4));
    let log = fs::read_to_string(dir.join("out/tune/mlp/trials.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 2);
}

#[test]
fn count_params_and_time_write_reports() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    linear(dir);
    config(dir, r#"[{"family": "mlp"}, {"family": "moe"}]"#, 1, 1, "[]");
    ok(dir, &["tune", "--config", "run.json"]);
    ok(dir, &["count-params", "--config", "run.json"]);
    ok(dir, &["time", "--config", "run.json"]);
    assert!(dir.join("out/params/param_counts.json").exists());
    assert!(dir.join("out/time/timing.json").exists());
}

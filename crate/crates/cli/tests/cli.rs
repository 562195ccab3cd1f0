//! End-to-end tests of the `sawtooth` binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};
use tempfile::TempDir;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn sawtooth(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sawtooth"))
        .current_dir(dir)
        .env_remove("SAWTOOTH_SYNTH_ENDPOINT")
        .args(args)
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn words(tag: &str, n: usize) -> String {
    (0..n).map(|i| format!("{tag}.{i}")).collect::<Vec<_>>().join(" ")
}

/// Enriched trajectory with |o|=10, |r|=100, |d|=10 and a 5-token action per step.
fn uniform_trajectory(task_id: &str, steps: usize, success: bool) -> String {
    let mut out = json!({
        "task_id": task_id,
        "system_prompt": "You are an agent.",
        "issue_statement": "Fix it.",
        "success": success,
    })
    .to_string()
        + "\n";
    for t in 1..=steps {
        out += &json!({
            "index": t,
            "observation": words(&format!("o{t}"), 10),
            "reasoning": words(&format!("r{t}"), 100),
            "digest": words(&format!("d{t}"), 10),
            "action": {"tool_name": "execute_bash", "parameters": {"cmd": format!("run {t} a b c")}},
        })
        .to_string();
        out.push('\n');
    }
    out
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn jsonl(text: &str) -> Vec<Value> {
    text.lines().map(|l| serde_json::from_str(l).unwrap()).collect()
}

#[test]
fn score_reports_exact_reward() {
    let dir = TempDir::new().unwrap();
    write(dir.path(), "t.jsonl", &uniform_trajectory("fixture", 3, true));
    let o = sawtooth(dir.path(), &["score", "--in", "t.jsonl", "--window", "1"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = jsonl(&stdout(&o));
    assert_eq!(rows[0]["L_full"], 375);
    assert_eq!(rows[0]["L_hybrid"], 175);
    assert_eq!(rows[0]["R_comp_exact"], "8/15");
    assert_eq!(rows[0]["reward_exact"], "83/75");
    assert!((rows[0]["reward"].as_f64().unwrap() - 1.106_666).abs() < 1e-6);

    let o = sawtooth(dir.path(), &["score", "--in", "t.jsonl", "--window", "2", "--format", "csv"]);
    let csv = stdout(&o);
    assert!(csv.starts_with("task_id,window,steps,L_full,L_hybrid"));
    assert!(csv.contains("fixture,2,3,375,275,"), "{csv}");
}

#[test]
fn reward_precedence_flags_over_file_over_defaults() {
    let dir = TempDir::new().unwrap();
    write(dir.path(), "t.jsonl", &uniform_trajectory("fixture", 3, true));
    let base = ["score", "--in", "t.jsonl", "--window", "1"];
    let reward = |extra: &[&str]| {
        let args: Vec<&str> = base.iter().chain(extra).copied().collect();
        let o = sawtooth(dir.path(), &args);
        assert!(o.status.success(), "{}", stderr(&o));
        jsonl(&stdout(&o))[0]["reward_exact"].as_str().unwrap().to_string()
    };
    // defaults 0.2 / 0.55
    assert_eq!(reward(&[]), "83/75");
    // file sets beta 0.5, gamma 0.3: 1 + 0.5 * 0.3
    let cfg = fixture("config.toml");
    let cfg = cfg.to_str().unwrap();
    assert_eq!(reward(&["--config", cfg]), "23/20");
    // flag beats file
    assert_eq!(reward(&["--config", cfg, "--gamma", "0.55"]), "19/15");
    // file window 3 applies when the flag is absent
    let o = sawtooth(dir.path(), &["score", "--in", "t.jsonl", "--config", cfg]);
    assert_eq!(jsonl(&stdout(&o))[0]["window"], 3);
}

#[test]
fn compile_writes_snapshots_and_manifest() {
    let dir = TempDir::new().unwrap();
    write(dir.path(), "t.jsonl", &uniform_trajectory("six", 6, true));
    let o = sawtooth(dir.path(), &["compile", "--in", "t.jsonl", "--out", "s.jsonl", "--window", "3"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let snaps = std::fs::read_to_string(dir.path().join("s.jsonl")).unwrap();
    assert_eq!(snaps.lines().count(), 6);
    let manifest: Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("s.jsonl.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["snapshots"], 6);
    assert_eq!(manifest["tasks"][0]["window"], 3);
    assert_eq!(manifest["max_sequence_tokens"], 26000);

    // a tight budget drops the long tail snapshots and records why
    let o = sawtooth(
        dir.path(),
        &["compile", "--in", "t.jsonl", "--out", "small.jsonl", "--window", "3", "--max-sequence-tokens", "400"],
    );
    assert!(o.status.success());
    let manifest: Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("small.jsonl.manifest.json")).unwrap()).unwrap();
    let dropped = manifest["tasks"][0]["dropped_steps"].as_array().unwrap().len();
    assert!(dropped > 0);
    assert_eq!(manifest["warnings"].as_array().unwrap().len(), dropped);
    assert_eq!(
        std::fs::read_to_string(dir.path().join("small.jsonl")).unwrap().lines().count(),
        6 - dropped
    );
}

#[test]
fn validate_flags_corrupted_snapshot() {
    let dir = TempDir::new().unwrap();
    write(dir.path(), "t.jsonl", &uniform_trajectory("six", 6, true));
    assert!(sawtooth(dir.path(), &["compile", "--in", "t.jsonl", "--out", "s.jsonl", "--window", "2"]).status.success());
    let o = sawtooth(dir.path(), &["validate", "--in", "s.jsonl"]);
    assert!(o.status.success(), "{}", stdout(&o));

    // paste r_1 into the observation of snapshot 5, outside its window
    let mut lines = jsonl(&std::fs::read_to_string(dir.path().join("s.jsonl")).unwrap());
    let seg = &mut lines[4]["segments"][2]["text"];
    *seg = format!("{} {}", seg.as_str().unwrap(), words("r1", 100)).into();
    let corrupted: String = lines.iter().map(|v| format!("{v}\n")).collect();
    write(dir.path(), "bad.jsonl", &corrupted);

    for extra in [vec![], vec!["--trajectories", "t.jsonl"]] {
        let mut args = vec!["validate", "--in", "bad.jsonl"];
        args.extend(extra);
        let o = sawtooth(dir.path(), &args);
        assert_eq!(o.status.code(), Some(1));
        let report: Value = serde_json::from_str(&stdout(&o)).unwrap();
        assert_eq!(report["ok"], false);
        let errors = report["errors"].as_array().unwrap();
        assert_eq!(errors.len(), 1, "{errors:?}");
        assert!(errors[0].as_str().unwrap().contains("snapshot 5 exposes reasoning of step 1"));
    }
}

#[test]
fn validate_reports_schema_errors() {
    let dir = TempDir::new().unwrap();
    write(dir.path(), "t.jsonl", "{\"task_id\":\"x\",\"system_prompt\":\"s\",\"issue_statement\":\"i\",\"success\":true}\n{\"index\":2}\n");
    let o = sawtooth(dir.path(), &["validate", "--in", "t.jsonl"]);
    assert_eq!(o.status.code(), Some(1));
    let report: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert!(report["errors"][0].as_str().unwrap().contains("line 2"));
}

#[test]
fn usage_errors_exit_two() {
    let dir = TempDir::new().unwrap();
    let o = sawtooth(dir.path(), &["score", "--in", "x.jsonl", "--bogus"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("Usage"));
    assert_eq!(sawtooth(dir.path(), &["frobnicate"]).status.code(), Some(2));
    assert_eq!(sawtooth(dir.path(), &["score", "--in", "x.jsonl", "--window", "5..2"]).status.code(), Some(2));
    let o = sawtooth(dir.path(), &["score", "--in", "missing.jsonl"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(sawtooth(dir.path(), &["--help"]).status.success());
}

#[test]
fn backfill_record_replay_and_resume() {
    let dir = TempDir::new().unwrap();
    let shallow = fixture("shallow.jsonl");
    let shallow = shallow.to_str().unwrap();
    let run = |args: &[&str]| sawtooth(dir.path(), args);
    let o = run(&["backfill", "--in", shallow, "--out", "a.jsonl", "--record", "tr.jsonl", "--seed", "3"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = run(&["backfill", "--in", shallow, "--out", "b.jsonl", "--endpoint", "replay:tr.jsonl", "--seed", "3"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let read = |n: &str| std::fs::read(dir.path().join(n)).unwrap();
    assert_eq!(read("a.jsonl"), read("b.jsonl"));

    // the environment variable selects the endpoint when no flag is given
    let o = Command::new(env!("CARGO_BIN_EXE_sawtooth"))
        .current_dir(dir.path())
        .env("SAWTOOTH_SYNTH_ENDPOINT", "replay:tr.jsonl")
        .args(["backfill", "--in", shallow, "--out", "c.jsonl", "--seed", "3"])
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(read("a.jsonl"), read("c.jsonl"));

    // a truncated transcript fails part-way: no output, a checkpoint instead
    let transcript = String::from_utf8(read("tr.jsonl")).unwrap();
    write(dir.path(), "part.jsonl", &transcript.lines().take(3).map(|l| format!("{l}\n")).collect::<String>());
    let o = run(&["backfill", "--in", shallow, "--out", "d.jsonl", "--endpoint", "replay:part.jsonl", "--seed", "3"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(!dir.path().join("d.jsonl").exists());
    let cps = jsonl(&String::from_utf8(read("d.jsonl.checkpoint.jsonl")).unwrap());
    assert_eq!(cps.iter().map(|c| c["last_enriched_step"].as_u64().unwrap()).sum::<u64>(), 3);

    let o = run(&[
        "backfill", "--in", shallow, "--out", "d.jsonl", "--endpoint", "replay:tr.jsonl", "--seed", "3",
        "--resume", "d.jsonl.checkpoint.jsonl",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(read("a.jsonl"), read("d.jsonl"));
}

#[test]
fn simulate_compares_strategies() {
    let dir = TempDir::new().unwrap();
    let a = fixture("scenario_calc.json");
    let b = fixture("scenario_calc_unfixed.json");
    let args = [
        "simulate", "--scenario", a.to_str().unwrap(), "--scenario", b.to_str().unwrap(),
        "--strategy", "interleaved", "--strategy", "dynamic:1", "--strategy", "current-step",
        "--out", "r.jsonl", "--metrics", "m.csv",
    ];
    let o = sawtooth(dir.path(), &args);
    assert!(o.status.success(), "{}", stderr(&o));
    let metrics = std::fs::read_to_string(dir.path().join("m.csv")).unwrap();
    let rows: Vec<&str> = metrics.lines().collect();
    assert_eq!(rows.len(), 4);
    assert!(rows[1].starts_with("interleaved,2,0,3.5000,0.5000,"), "{}", rows[1]);
    let records = jsonl(&std::fs::read_to_string(dir.path().join("r.jsonl")).unwrap());
    assert_eq!(records.len(), 6);
    assert!(records.iter().all(|r| r["reason"] == "submit"));
    assert_eq!(records[0]["trajectory"]["success"], true);
    assert_eq!(records[1]["trajectory"]["success"], false);
    for r in &records {
        assert_eq!(r["context_series"].as_array().unwrap().len(), r["trajectory"]["steps"].as_array().unwrap().len());
    }

    let first = std::fs::read(dir.path().join("r.jsonl")).unwrap();
    assert!(sawtooth(dir.path(), &args).status.success());
    assert_eq!(first, std::fs::read(dir.path().join("r.jsonl")).unwrap());

    // evaluation preset from the config file, overridden by a flag
    let cfg = fixture("config.toml");
    let o = sawtooth(
        dir.path(),
        &["simulate", "--scenario", a.to_str().unwrap(), "--config", cfg.to_str().unwrap(), "--max-steps", "2", "--out", "capped.jsonl"],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let rec = &jsonl(&std::fs::read_to_string(dir.path().join("capped.jsonl")).unwrap())[0];
    assert_eq!(rec["reason"], "max-steps");
    assert_eq!(rec["strategy"], "dynamic:3");
}

#[test]
fn simulate_requires_a_policy() {
    let dir = TempDir::new().unwrap();
    let mut scenario: Value = serde_json::from_str(&std::fs::read_to_string(fixture("scenario_calc.json")).unwrap()).unwrap();
    scenario.as_object_mut().unwrap().remove("scripted_responses");
    write(dir.path(), "s.json", &scenario.to_string());
    let o = sawtooth(dir.path(), &["simulate", "--scenario", "s.json", "--out", "r.jsonl"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(!dir.path().join("r.jsonl").exists());
}

#[test]
fn stats_summarize_both_kinds() {
    let dir = TempDir::new().unwrap();
    write(dir.path(), "t.jsonl", &(uniform_trajectory("a", 3, true) + &uniform_trajectory("b", 5, false)));
    let o = sawtooth(dir.path(), &["stats", "--in", "t.jsonl", "--window", "1"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let s: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(s["kind"], "trajectories");
    assert_eq!(s["steps"]["total"], 8);
    assert_eq!(s["success_rate"]["exact"], "1/2");
    assert_eq!(s["mean_tokens_per_enriched_step"]["reasoning"]["exact"], "100");

    assert!(sawtooth(dir.path(), &["compile", "--in", "t.jsonl", "--out", "s.jsonl", "--window", "2"]).status.success());
    let o = sawtooth(dir.path(), &["stats", "--in", "s.jsonl"]);
    let s: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(s["kind"], "snapshots");
    assert_eq!(s["snapshots"], 8);
    assert_eq!(s["windows"]["2"], 2);
}

#[test]
fn outputs_are_deterministic() {
    let dir = TempDir::new().unwrap();
    write(dir.path(), "t.jsonl", &(uniform_trajectory("a", 4, true) + &uniform_trajectory("b", 7, true)));
    for (out, extra) in [("x", "--seed"), ("y", "--seed")] {
        let o = sawtooth(dir.path(), &["compile", "--in", "t.jsonl", "--out", &format!("{out}.jsonl"), extra, "9"]);
        assert!(o.status.success());
    }
    let read = |n: &str| std::fs::read(dir.path().join(n)).unwrap();
    assert_eq!(read("x.jsonl"), read("y.jsonl"));
    assert_eq!(read("x.jsonl.manifest.json"), read("y.jsonl.manifest.json"));
}

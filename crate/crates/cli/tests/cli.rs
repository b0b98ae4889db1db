use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};

fn fixture(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures").join(rel)
}

fn hopground(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hopground"))
        .args(args)
        .env("RUST_LOG", "warn")
        .env_remove("OPENAI_API_KEY")
        .env_remove("OPENAI_BASE_URL")
        .output()
        .unwrap()
}

fn ok(out: &Output) -> String {
    assert_eq!(out.status.code(), Some(0), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn festival_run(out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![
        "run",
        "--dataset",
        s(&fixture("festival/dataset.jsonl")).to_owned().leak(),
        "--corpus",
        s(&fixture("festival/corpus.jsonl")).to_owned().leak(),
        "--llm-script",
        s(&fixture("festival/script.json")).to_owned().leak(),
        "--out",
        s(out),
    ];
    args.extend_from_slice(extra);
    hopground(&args)
}

#[test]
fn index_builds_and_rejects_bad_corpora() {
    let dir = tempfile::tempdir().unwrap();
    let cache = dir.path().join("idx.bin");
    let stdout = ok(&hopground(&["index", "--corpus", s(&fixture("bm25_corpus.jsonl")), "--out", s(&cache)]));
    assert!(stdout.contains("20"), "{stdout}");

    // the cache feeds a run
    let run_dir = dir.path().join("run");
    let out = hopground(&[
        "run",
        "--dataset",
        s(&fixture("festival/dataset.jsonl")),
        "--index",
        s(&cache),
        "--llm-script",
        s(&fixture("festival/script.json")),
        "--out",
        s(&run_dir),
    ]);
    ok(&out);

    let empty = dir.path().join("empty.jsonl");
    std::fs::write(&empty, "").unwrap();
    assert_eq!(hopground(&["index", "--corpus", s(&empty), "--out", s(&cache)]).status.code(), Some(2));
    let dup = dir.path().join("dup.jsonl");
    std::fs::write(&dup, "{\"id\":\"a\",\"body\":\"x\"}\n{\"id\":\"a\",\"body\":\"y\"}\n").unwrap();
    assert_eq!(hopground(&["index", "--corpus", s(&dup), "--out", s(&cache)]).status.code(), Some(2));
    let missing = dir.path().join("nope.jsonl");
    assert_eq!(hopground(&["index", "--corpus", s(&missing), "--out", s(&cache)]).status.code(), Some(1));
}

#[test]
fn run_replays_festival_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    ok(&festival_run(&a, &[]));
    ok(&festival_run(&b, &[]));
    let ta = std::fs::read_to_string(a.join("trajectories.jsonl")).unwrap();
    assert_eq!(ta, std::fs::read_to_string(b.join("trajectories.jsonl")).unwrap());
    let t: Value = serde_json::from_str(ta.lines().next().unwrap()).unwrap();
    assert_eq!(t["final_answer"], "March and April");
    assert_eq!(t["hops"].as_array().unwrap().len(), 2);
    let manifest: Value = serde_json::from_str(&std::fs::read_to_string(a.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["totals"]["llm_calls"], 5);
    assert_eq!(manifest["config"]["pipeline"]["max_hops"], 5);
}

#[test]
fn flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.toml");
    std::fs::write(&cfg, "[pipeline]\nmax_hops = 4\ntop_k = 7\n").unwrap();
    let out = dir.path().join("r");
    ok(&festival_run(&out, &["--config", s(&cfg), "--max-hops", "1"]));
    let manifest: Value = serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config"]["pipeline"]["max_hops"], 1);
    assert_eq!(manifest["config"]["pipeline"]["top_k"], 7);
    let t: Value = serde_json::from_str(std::fs::read_to_string(out.join("trajectories.jsonl")).unwrap().trim()).unwrap();
    assert_eq!(t["termination"], "max_hops_reached");
}

#[test]
fn invalid_config_exits_1_without_output() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r");
    let r = festival_run(&out, &["--batch-size", "0"]);
    assert_eq!(r.status.code(), Some(1));
    assert!(!out.join("trajectories.jsonl").exists());

    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "[pipeline]\nmax_hopz = 3\n").unwrap();
    assert_eq!(festival_run(&out, &["--config", s(&cfg)]).status.code(), Some(1));
}

#[test]
fn malformed_dataset_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let ds = dir.path().join("bad.jsonl");
    std::fs::write(&ds, "{\"id\":\"x\",\"question\":\"Q?\"}\n").unwrap();
    let out = hopground(&[
        "run",
        "--dataset",
        s(&ds),
        "--corpus",
        s(&fixture("festival/corpus.jsonl")),
        "--llm-script",
        s(&fixture("festival/script.json")),
        "--out",
        s(&dir.path().join("r")),
    ]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}

fn write_run(dir: &Path, answers: &[(&str, &str, &str)]) -> (PathBuf, PathBuf) {
    let ds = dir.join("ds.jsonl");
    let script = dir.join("script.json");
    let mut lines = String::new();
    let mut per = serde_json::Map::new();
    for (id, gold, pred) in answers {
        lines += &format!("{}\n", json!({"id": id, "question": format!("What about {id}?"), "answers": [gold]}));
        per.insert(id.to_string(), json!([format!("###Finish[{pred}]")]));
    }
    std::fs::write(&ds, lines).unwrap();
    std::fs::write(&script, Value::Object(per).to_string()).unwrap();
    let run = dir.join("run");
    ok(&hopground(&[
        "run",
        "--dataset",
        s(&ds),
        "--corpus",
        s(&fixture("bm25_corpus.jsonl")),
        "--llm-script",
        s(&script),
        "--out",
        s(&run),
        "--concurrency",
        "3",
    ]));
    (ds, run.join("trajectories.jsonl"))
}

#[test]
fn eval_scores_and_judges() {
    let dir = tempfile::tempdir().unwrap();
    let rows: Vec<(String, String)> = (0..10).map(|i| (format!("q{i}"), format!("answer {i}"))).collect();
    let triples: Vec<(&str, &str, &str)> = rows.iter().map(|(id, a)| (id.as_str(), a.as_str(), a.as_str())).collect();
    let (ds, traj) = write_run(dir.path(), &triples);
    let stdout = ok(&hopground(&["eval", "--trajectories", s(&traj), "--dataset", s(&ds)]));
    assert!(stdout.contains("Acc 100.00") && stdout.contains("F1 100.00"), "{stdout}");
    let csv = std::fs::read_to_string(traj.parent().unwrap().join("eval.csv")).unwrap();
    assert_eq!(csv.lines().count(), 11);
    assert_eq!(csv.lines().next().unwrap(), "question_id,acc,f1,acc_judge");

    let judge = dir.path().join("judge.json");
    let replies: Vec<&str> = (0..10).map(|i| if i % 2 == 0 { "Yes" } else { "No" }).collect();
    std::fs::write(&judge, serde_json::to_string(&replies).unwrap()).unwrap();
    let stdout = ok(&hopground(&[
        "eval",
        "--trajectories",
        s(&traj),
        "--dataset",
        s(&ds),
        "--judge",
        "--judge-script",
        s(&judge),
    ]));
    assert!(stdout.contains("50.00"), "{stdout}");
    let summary: Value =
        serde_json::from_str(&std::fs::read_to_string(traj.parent().unwrap().join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["acc_judge"], 50.0);
}

#[test]
fn eval_reports_misaligned_ids() {
    let dir = tempfile::tempdir().unwrap();
    let (_, traj) = write_run(dir.path(), &[("a", "x", "x"), ("b", "y", "y")]);
    let other = dir.path().join("other.jsonl");
    std::fs::write(
        &other,
        "{\"id\":\"a\",\"question\":\"Q\",\"answers\":[\"x\"]}\n{\"id\":\"zz\",\"question\":\"Q\",\"answers\":[\"y\"]}\n",
    )
    .unwrap();
    let out = hopground(&["eval", "--trajectories", s(&traj), "--dataset", s(&other)]);
    assert_ne!(out.status.code(), Some(0));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("zz") && err.contains('b'), "{err}");
}

fn synth_inputs(dir: &Path) -> (PathBuf, PathBuf, PathBuf) {
    let mut lines = String::new();
    let mut student = serde_json::Map::new();
    let mut teacher = serde_json::Map::new();
    for i in 0..10 {
        let id = format!("s{i}");
        let answer = format!("Value{i}");
        let noise: Vec<Value> = (0..9)
            .map(|j| json!({"id": format!("n{i}_{j}"), "title": "", "body": format!("noise passage {j}")}))
            .collect();
        lines += &format!(
            "{}\n",
            json!({
                "id": id,
                "question": format!("What is item {i}?"),
                "answer": answer,
                "gold_doc": {"id": format!("g{i}"), "title": "Gold", "body": format!("Item {i} is {answer}.")},
                "noise_docs": noise,
            })
        );
        student.insert(id.clone(), json!(["not sure"]));
        let reply = match i {
            3 => "<ref> Empty </ref>".to_string(),
            7 => format!("<ref> Item {i} is {answer} </ref> <revise> something else </revise>"),
            _ => format!("<ref> Item {i} is {answer} </ref> <revise> It is {answer}. </revise>"),
        };
        teacher.insert(id, json!([reply]));
    }
    let (inp, st, te) = (dir.join("in.jsonl"), dir.join("student.json"), dir.join("teacher.json"));
    std::fs::write(&inp, lines).unwrap();
    std::fs::write(&st, Value::Object(student).to_string()).unwrap();
    std::fs::write(&te, Value::Object(teacher).to_string()).unwrap();
    (inp, st, te)
}

#[test]
fn synth_filters_and_is_reproducible_then_stats() {
    let dir = tempfile::tempdir().unwrap();
    let (inp, st, te) = synth_inputs(dir.path());
    let synth = |out: &Path| {
        hopground(&[
            "synth",
            "--input",
            s(&inp),
            "--out",
            s(out),
            "--seed",
            "7",
            "--student-script",
            s(&st),
            "--teacher-script",
            s(&te),
        ])
    };
    let (a, b) = (dir.path().join("a.jsonl"), dir.path().join("b.jsonl"));
    let stdout = ok(&synth(&a));
    assert!(stdout.contains("kept 8, dropped 2"), "{stdout}");
    ok(&synth(&b));
    let text = std::fs::read_to_string(&a).unwrap();
    assert_eq!(text, std::fs::read_to_string(&b).unwrap());
    assert_eq!(text.lines().count(), 8);

    let report = dir.path().join("stats.json");
    let stdout = ok(&hopground(&["stats", "--corpus", s(&a), "--out", s(&report)]));
    let v: Value = serde_json::from_str(&stdout).unwrap();
    assert_eq!(v["count"], 8);
    assert_eq!(v["avg_gold_docs"], 1.0);
    assert_eq!(v, serde_json::from_str::<Value>(&std::fs::read_to_string(&report).unwrap()).unwrap());

    let bad = dir.path().join("bad.jsonl");
    std::fs::write(&bad, "{\"id\":\"x\"}\n").unwrap();
    let out = hopground(&["synth", "--input", s(&bad), "--out", s(&a), "--student-script", s(&st), "--teacher-script", s(&te)]);
    assert_eq!(out.status.code(), Some(2));
}

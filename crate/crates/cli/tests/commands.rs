use std::path::Path;
use std::process::{Command, Output};

use decker_core::gateway::{ChatRequest, ChatResponse, ScriptedBackend};
use decker_core::knowledge::{Edit, EditRecord};
use decker_core::mask_path::{parse_masked_path, strip_mask, MaskTag};
use decker_core::prompts;
use decker_core::retrieval::build_query;
use serde_json::{json, Value};
use tempfile::TempDir;

fn decker(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_decker"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

const QUESTION: &str = "What is the occupation of the chairperson of the Palestine Liberation Organization?";
const PATH: &str = "[STEP] The chairperson of the Palestine Liberation Organization is [MASK 1].\n\
                    [STEP] The occupation of [MASK 1] is [MASK ANS].\n\
                    [CATEGORY]\n[MASK 1] [person]\n[MASK ANS] [occupation]";

fn chairperson_edits() -> Vec<EditRecord> {
    vec![
        EditRecord {
            subject: "Palestine Liberation Organization".into(),
            relation_prompt: "The chairperson of {} is".into(),
            target_true: "Mahmoud Abbas".into(),
            target_new: "Regina Ip".into(),
        },
        EditRecord {
            subject: "Regina Ip".into(),
            relation_prompt: "{} works in the field of".into(),
            target_true: "politician".into(),
            target_new: "basketball player".into(),
        },
    ]
}

fn generation_fixture() -> ScriptedBackend {
    let mut llm = ScriptedBackend::new();
    llm.insert_request(
        &ChatRequest::greedy(prompts::generation_messages(QUESTION)).with_max_tokens(512),
        ChatResponse::text(PATH),
    );
    llm
}

/// Statements get basis vectors; the two step queries get score rows that
/// clear both thresholds for the matching edit.
fn embedder_fixture(edits: &[Edit]) -> Value {
    let path = parse_masked_path(PATH).unwrap();
    let steps = path.steps();
    let q1 = build_query(&strip_mask(&steps[0], &MaskTag::numbered(1)).unwrap(), None).unwrap();
    let second = path.substitute(&MaskTag::numbered(1), "Regina Ip");
    let q2 = build_query(&strip_mask(&second.steps()[1], &MaskTag::Answer).unwrap(), Some("Regina Ip")).unwrap();
    json!({
        edits[0].statement.clone(): [1.0, 0.0],
        edits[1].statement.clone(): [0.0, 1.0],
        q1: [1.9, 0.4],
        q2: [0.9, 1.7],
    })
}

#[test]
fn edit_command_replays_two_hop_example() {
    let dir = TempDir::new().unwrap();
    let records = chairperson_edits();
    let edits: Vec<Edit> = records.iter().map(|r| r.to_edit().unwrap()).collect();
    let fixtures = dir.path().join("llm.json");
    std::fs::write(&fixtures, generation_fixture().to_json()).unwrap();
    let vectors = dir.path().join("vectors.json");
    std::fs::write(&vectors, embedder_fixture(&edits).to_string()).unwrap();
    let edits_file = dir.path().join("edits.json");
    std::fs::write(&edits_file, serde_json::to_string(&records[..1]).unwrap()).unwrap();

    let out = decker(&[
        "edit",
        "--question",
        QUESTION,
        "--edits-file",
        path_str(&edits_file),
        "--edit",
        &serde_json::to_string(&records[1]).unwrap(),
        "--backend",
        "scripted",
        "--fixtures",
        path_str(&fixtures),
        "--embedder",
        "scripted",
        "--embedder-fixtures",
        path_str(&vectors),
    ]);
    let text = stdout(&out);
    assert!(out.status.success(), "{text}\n{}", String::from_utf8_lossy(&out.stderr));
    let route = |tag: &str| {
        let fills = &text[text.find("fills:").unwrap()..];
        let line = fills.lines().find(|l| l.trim_start().starts_with(tag)).unwrap();
        line.split_whitespace().nth(tag.split_whitespace().count()).unwrap().to_string()
    };
    assert_eq!(route("[MASK 1]"), "edit", "{text}");
    assert_eq!(route("[MASK ANS]"), "edit", "{text}");
    assert!(text.trim_end().ends_with("answer: basketball player"), "{text}");
}

#[test]
fn edit_command_without_edits_asks_the_model() {
    let dir = TempDir::new().unwrap();
    let mut llm = generation_fixture();
    let fill = |category: &str, sentence: &str| ChatRequest::greedy(prompts::fill_messages(category, sentence)).with_max_tokens(32);
    llm.insert_request(
        &fill("person", "The chairperson of the Palestine Liberation Organization is [MASK 1]."),
        ChatResponse::text("Mahmoud Abbas"),
    );
    llm.insert_request(
        &fill("occupation", "The occupation of Mahmoud Abbas is [MASK ANS]."),
        ChatResponse::text("politician"),
    );
    let fixtures = dir.path().join("llm.json");
    std::fs::write(&fixtures, llm.to_json()).unwrap();
    let out = decker(&["edit", "--question", QUESTION, "--backend", "scripted", "--fixtures", path_str(&fixtures)]);
    let text = stdout(&out);
    assert!(out.status.success(), "{text}\n{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(text.matches(" llm ").count(), 2, "{text}");
    assert!(text.trim_end().ends_with("answer: politician"), "{text}");
}

#[test]
fn malformed_edit_fails() {
    let out = decker(&["edit", "--question", QUESTION, "--backend", "oracle", "--edit", "{\"subject\": 3}"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("malformed edit"));
}

#[test]
fn flags_override_config_file() {
    let dir = TempDir::new().unwrap();
    let config = dir.path().join("config.json");
    std::fs::write(
        &config,
        r#"{"backend": "oracle", "kg_seed": 4, "cases": 12, "mode": "bon", "n": 3, "edit_batch_size": 6, "alpha": 1.4}"#,
    )
    .unwrap();
    let report = dir.path().join("report.json");
    let out = decker(&["run", "--config", path_str(&config), "--mode", "base", "--cases", "8", "--report", path_str(&report)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let r: Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(r["config"]["mode"], "base");
    assert_eq!(r["total"], 8);
    assert_eq!(r["config"]["sample"]["n"], 3);
    assert_eq!(r["config"]["edit_batch_size"], 6);
    assert_eq!(r["config"]["conflict"]["alpha"], 1.4);
    assert_eq!(r["config"]["conflict"]["beta"], 0.1);
    assert_eq!(r["backend"], "oracle");

    std::fs::write(&config, r#"{"backend": "oracle", "nn": 3}"#).unwrap();
    let out = decker(&["run", "--config", path_str(&config), "--report", path_str(&dir.path().join("r2.json"))]);
    assert!(!out.status.success());
    assert!(!dir.path().join("r2.json").exists());
}

#[test]
fn missing_dataset_writes_no_report() {
    let dir = TempDir::new().unwrap();
    let report = dir.path().join("report.json");
    let missing = dir.path().join("absent.json");
    let out = decker(&["run", "--dataset", path_str(&missing), "--backend", "oracle", "--report", path_str(&report)]);
    assert!(!out.status.success());
    assert!(!report.exists());
    let out = decker(&["run", "--backend", "remote", "--backend-url", "http://127.0.0.1:9", "--report", path_str(&report)]);
    assert!(!out.status.success());
    assert!(!report.exists());
}

#[test]
fn gen_is_deterministic_and_loadable() {
    let dir = TempDir::new().unwrap();
    let (a, b) = (dir.path().join("a.json"), dir.path().join("b.json"));
    for p in [&a, &b] {
        let out = decker(&["gen", "--seed", "1", "--cases", "200", "--hops", "2,3,4", "--out", path_str(p)]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let bytes = std::fs::read(&a).unwrap();
    assert_eq!(bytes, std::fs::read(&b).unwrap());
    let set = decker_core::knowledge::load_cases(&a).unwrap();
    assert_eq!(set.cases.len(), 200);
    assert!(set.flagged.is_empty());

    // the generated file runs through the oracle built from the same seed
    let report = dir.path().join("report.json");
    let out = decker(&[
        "run", "--dataset", path_str(&a), "--backend", "oracle", "--kg-seed", "1", "--edit-batch-size", "10",
        "--report", path_str(&report),
    ]);
    assert!(out.status.success());
    assert!(stdout(&out).starts_with("accuracy 1.0000 (200/200)"), "{}", stdout(&out));
}

#[test]
fn gen_rejects_infeasible_requests() {
    assert!(!decker(&["gen", "--hops", "30", "--cases", "2"]).status.success());
    assert!(!decker(&["gen", "--kg-entities", "3"]).status.success());
}

#[test]
fn similarity_command() {
    let dir = TempDir::new().unwrap();
    let write = |name: &str, body: &str| {
        let p = dir.path().join(name);
        std::fs::write(&p, body).unwrap();
        p
    };
    let full = write("full.json", r#"["capital of", "head of state", "citizen of"]"#);
    let same = write("same.txt", "capital of\nhead of state\ncitizen of\n");
    let prefix = write("prefix.txt", "capital of\n");
    let cross = write("cross.json", r#"["capital city of", "citizen of"]"#);
    let score = |a: &Path, b: &Path, sim: &str| -> f64 {
        let out = decker(&["similarity", path_str(a), path_str(b), "--sim", sim]);
        assert!(out.status.success());
        stdout(&out).trim().parse().unwrap()
    };
    assert_eq!(score(&full, &same, "exact"), 1.0);
    assert!((score(&full, &prefix, "exact") - 1.0 / 3.0).abs() < 1e-12);
    // jaccard: {capital, of} vs {capital, city, of} = 2/3; {head, state, of} vs {citizen, of} = 1/4
    assert!((score(&full, &cross, "jaccard") - (2.0 / 3.0 + 0.25) / 3.0).abs() < 1e-12);
    assert_eq!(score(&full, &cross, "exact"), 0.0);
}

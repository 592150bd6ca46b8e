mod common;

use std::path::Path;
use std::process::{Command, Output};

use common::fixture;

fn harmscope(output: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_harmscope"))
        .arg("--output")
        .arg(output)
        .args(args)
        .env("SOURCE_DATE_EPOCH", "1767225600")
        .env_remove("RUST_LOG")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn extracted_fixture() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    let corpus = fixture("c5.json");
    assert_eq!(
        code(&harmscope(
            dir.path(),
            &["extract", "--corpus", corpus.to_str().unwrap()]
        )),
        0
    );
    dir
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

#[test]
fn fixture_stages_run_in_order() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = fixture("c5.json");
    let corpus = corpus.to_str().unwrap();

    let extract = harmscope(dir.path(), &["extract", "--corpus", corpus]);
    assert_eq!(code(&extract), 0, "{}", String::from_utf8_lossy(&extract.stderr));
    assert!(stdout(&extract).contains("backend calls: 0, cache hits: 5"));

    let filter = harmscope(dir.path(), &["filter"]);
    assert_eq!(stdout(&filter).trim(), "incidents: 4, subjects: 6");

    let metrics = harmscope(dir.path(), &["metrics"]);
    assert_eq!(code(&metrics), 0);
    let manifest = std::fs::read_to_string(dir.path().join("report/manifest.json")).unwrap();
    assert!(manifest.contains("\"generated_at\": \"2026-01-01T00:00:00Z\""));
    let golden = fixture("golden/report/manifest.json");
    assert_eq!(manifest, std::fs::read_to_string(golden).unwrap());
}

#[test]
fn missing_corpus_is_file_not_found() {
    let dir = tempfile::tempdir().unwrap();
    let out = harmscope(dir.path(), &["extract", "--corpus", "/nonexistent/corpus.json"]);
    assert_eq!(code(&out), 3);
}

#[test]
fn stages_refuse_to_run_without_their_input() {
    let dir = tempfile::tempdir().unwrap();
    let filter = harmscope(dir.path(), &["filter"]);
    assert_eq!(code(&filter), 8);
    assert!(String::from_utf8_lossy(&filter.stderr).contains("extract"));
    assert_eq!(code(&harmscope(dir.path(), &["metrics"])), 8);
}

#[test]
fn replay_miss_is_backend_unavailable() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = fixture("c5.json");
    let out = harmscope(
        dir.path(),
        &[
            "extract",
            "--corpus",
            corpus.to_str().unwrap(),
            "--cache-dir",
            dir.path().to_str().unwrap(),
        ],
    );
    assert_eq!(code(&out), 5);
}

#[test]
fn metrics_on_an_empty_filtered_corpus_fails_with_its_own_code() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("extractions.jsonl"), "").unwrap();
    assert_eq!(code(&harmscope(dir.path(), &["filter"])), 0);
    assert_eq!(code(&harmscope(dir.path(), &["metrics"])), 9);
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(
        code(&harmscope(dir.path(), &["metrics", "--pair-scope", "sentence"])),
        2
    );
}

#[test]
fn dump_prompt_embeds_both_reports_of_incident_42() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = fixture("c5.json");
    let out = harmscope(
        dir.path(),
        &["extract", "--corpus", corpus.to_str().unwrap(), "--dump-prompt", "42"],
    );
    assert_eq!(code(&out), 0);
    let prompt = stdout(&out);
    assert!(prompt.contains("TotalReportNumber: \"2\""));
    assert!(prompt.contains("4201") && prompt.contains("4202"));
    assert!(!prompt.contains("{categories}"));
}

#[test]
fn validate_reports_hand_computed_agreement() {
    let dir = extracted_fixture();
    let corpus = fixture("c5.json");
    let gold = fixture("gold.csv");
    let out = harmscope(
        dir.path(),
        &[
            "validate",
            "--corpus",
            corpus.to_str().unwrap(),
            "--gold",
            gold.to_str().unwrap(),
        ],
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let text = stdout(&out);
    assert!(text.contains("subject identification: 0.875 (7/8)"));
    assert!(text.contains("category values: 0.995 (181/182)"));
    assert!(text.contains("causal relevance: 0.857 (12/14)"));
    assert!(text.contains("PABAK: 0.714"));
    assert!(dir.path().join("validation_report.json").exists());
}

#[test]
fn malformed_gold_file_has_its_own_exit_code() {
    let dir = extracted_fixture();
    let gold = dir.path().join("gold.csv");
    std::fs::write(&gold, "this,is,not\nthe,gold,header\n").unwrap();
    let corpus = fixture("c5.json");
    let out = harmscope(
        dir.path(),
        &[
            "validate",
            "--corpus",
            corpus.to_str().unwrap(),
            "--gold",
            gold.to_str().unwrap(),
        ],
    );
    assert_eq!(code(&out), 10);
}

#[test]
fn synthetic_corpus_round_trips_through_every_stage() {
    let dir = tempfile::tempdir().unwrap();
    let synth = harmscope(dir.path(), &["synth", "--seed", "3"]);
    assert_eq!(stdout(&synth).trim(), "incidents: 100, cache entries: 100");

    let run = dir.path().join("run");
    let corpus = dir.path().join("corpus.json");
    assert_eq!(
        code(&harmscope(&run, &["extract", "--corpus", corpus.to_str().unwrap()])),
        0
    );
    assert_eq!(code(&harmscope(&run, &["filter"])), 0);
    assert_eq!(code(&harmscope(&run, &["metrics", "--min-support", "1"])), 0);
    let edges = std::fs::read_to_string(run.join("report/tables/amplification_edges.csv")).unwrap();
    assert!(
        edges.contains("Nationality,us,Political Identity,right-wing,4,10,20,100,2.000,2.000,true"),
        "{edges}"
    );
}

#[test]
fn synth_is_deterministic_per_seed() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for dir in [&a, &b] {
        assert_eq!(code(&harmscope(dir.path(), &["synth", "--seed", "11", "--noise"])), 0);
    }
    for file in ["corpus.json", "extractions.jsonl", "expected_counts.json"] {
        assert_eq!(
            std::fs::read(a.path().join(file)).unwrap(),
            std::fs::read(b.path().join(file)).unwrap(),
            "{file}"
        );
    }
}

#[test]
fn infeasible_plant_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let out = harmscope(dir.path(), &["synth", "--n-a", "5", "--n-b", "5", "--joint", "6"]);
    assert_eq!(code(&out), 2, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn rubric_export_lists_all_categories() {
    let dir = tempfile::tempdir().unwrap();
    let out = harmscope(dir.path(), &["rubric", "export"]);
    let rubric: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    let text = rubric.to_string();
    for name in ["Political Identity", "Nationality", "Gender", "Race", "Class", "Age"] {
        assert!(text.contains(name), "{name}");
    }
}

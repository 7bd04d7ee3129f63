//! The `kc` binary: subcommands, outputs and exit codes.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn kc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kc"))
        .args(args)
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn fixture(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../fixtures")
        .join(rel)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn help_and_usage_errors() {
    let o = kc(&["--help"]);
    assert_eq!(code(&o), 0);
    assert!(String::from_utf8_lossy(&o.stdout).contains("discover"));
    assert_eq!(code(&kc(&["frobnicate"])), 1);
    assert_eq!(code(&kc(&["corpus", "sample", "--problem", "fix45"])), 1);
}

#[test]
fn synth_reproduces_bundled_corpus() {
    let dir = tempfile::tempdir().unwrap();
    let o = kc(&["synth", "--out", s(dir.path())]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["problems.jsonl", "submissions.jsonl"] {
        assert_eq!(
            std::fs::read(dir.path().join(f)).unwrap(),
            std::fs::read(fixture("synth").join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn corpus_sample_and_data_errors() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sample.jsonl");
    let corpus = fixture("synth/submissions.jsonl");
    let o = kc(&[
        "corpus",
        "sample",
        "--problem",
        "fix45",
        "--n",
        "5",
        "--in",
        s(&corpus),
        "--out",
        s(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(&out).unwrap();
    assert_eq!(text.lines().count(), 5);
    assert!(text.lines().all(|l| l.contains("\"is_correct\":false")));

    let bad = dir.path().join("bad.jsonl");
    std::fs::write(&bad, "{\"submission_id\": 1}\n").unwrap();
    let o = kc(&[
        "corpus",
        "sample",
        "--problem",
        "fix45",
        "--in",
        s(&bad),
        "--problems",
        s(&fixture("synth/problems.jsonl")),
        "--out",
        s(&out),
    ]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 1"));
}

#[test]
fn evaluate_prints_golden_table() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("summary.json");
    let o = kc(&[
        "evaluate",
        "--ratings",
        s(&fixture("ratings/scores.jsonl")),
        "--pairs",
        s(&fixture("ratings/pairs.jsonl")),
        "--mode",
        "exact",
        "--out",
        s(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let golden = std::fs::read_to_string(fixture("ratings/summary_table.txt")).unwrap();
    assert_eq!(String::from_utf8(o.stdout).unwrap(), golden);
    let summary: serde_json::Value = serde_json::from_slice(&std::fs::read(&out).unwrap()).unwrap();
    assert_eq!(summary["items"].as_array().unwrap().len(), 5);

    let missing = dir.path().join("none.jsonl");
    let o = kc(&[
        "evaluate",
        "--ratings",
        s(&missing),
        "--pairs",
        s(&missing),
        "--out",
        s(&out),
    ]);
    assert_eq!(code(&o), 2);
}

#[test]
fn step_by_step_chain_with_stub() {
    let dir = tempfile::tempdir().unwrap();
    let d = |f: &str| dir.path().join(f);
    let corpus = fixture("synth/submissions.jsonl");
    let ok = |o: Output| {
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        o
    };
    ok(kc(&[
        "ast",
        "extract",
        "--in",
        s(&corpus),
        "--out",
        s(&d("subtrees.jsonl")),
    ]));
    ok(kc(&[
        "sann",
        "train",
        "--subtrees",
        s(&d("subtrees.jsonl")),
        "--labels",
        s(&corpus),
        "--out",
        s(&d("model.sann")),
    ]));
    assert!(d("model.sann.report.json").exists());
    ok(kc(&[
        "discover",
        "--corpus",
        s(&corpus),
        "--sann",
        s(&d("model.sann")),
        "--out",
        s(&d("inventory.json")),
    ]));
    let inventory: serde_json::Value =
        serde_json::from_slice(&std::fs::read(d("inventory.json")).unwrap()).unwrap();
    assert_eq!(inventory["centroids"].as_array().unwrap().len(), 50);

    let sample = std::fs::read_to_string(fixture("synth/submissions.jsonl")).unwrap();
    let incorrect: serde_json::Value = sample
        .lines()
        .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap())
        .find(|v| v["is_correct"] == false)
        .unwrap();
    let sub = incorrect["submission_id"].as_str().unwrap();
    let o = ok(kc(&[
        "infer",
        "--corpus",
        s(&corpus),
        "--submission",
        sub,
        "--sann",
        s(&d("model.sann")),
        "--vae",
        s(&d("inventory.vae")),
        "--inventory",
        s(&d("inventory.json")),
        "--out",
        s(&d("assignment.json")),
    ]));
    assert!(String::from_utf8_lossy(&o.stdout).contains("attention"));
    ok(kc(&[
        "enrich",
        "--corpus",
        s(&corpus),
        "--assignment",
        s(&d("assignment.json")),
        "--llm",
        "stub",
        "--out",
        s(&d("labels.jsonl")),
    ]));
    ok(kc(&[
        "generate",
        "--corpus",
        s(&corpus),
        "--assignment",
        s(&d("assignment.json")),
        "--labels",
        s(&d("labels.jsonl")),
        "--llm",
        "stub",
        "--out",
        s(&d("gen")),
    ]));
    let examples = std::fs::read_to_string(d("gen/examples.jsonl")).unwrap();
    assert_eq!(examples.lines().count(), 2);
    assert_eq!(
        std::fs::read_to_string(d("gen/pairs.jsonl"))
            .unwrap()
            .lines()
            .count(),
        1
    );

    // replay answers the same prompts from the stored transcripts
    ok(kc(&[
        "generate",
        "--corpus",
        s(&corpus),
        "--assignment",
        s(&d("assignment.json")),
        "--labels",
        s(&d("labels.jsonl")),
        "--llm",
        "replay",
        "--transcripts",
        s(&d("gen/transcripts")),
        "--out",
        s(&d("replayed")),
    ]));
    assert_eq!(
        std::fs::read_to_string(d("replayed/examples.jsonl")).unwrap(),
        examples
    );
}

#[test]
fn run_reports_missing_upstream() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("kc.toml");
    std::fs::write(
        &cfg,
        format!(
            "corpus = {:?}\noutput_root = \"out\"\n[sample]\nper_problem = 3\n[llm]\nmode = \"stub\"\n",
            s(&fixture("synth/submissions.jsonl"))
        ),
    )
    .unwrap();
    let o = kc(&["run", "--config", s(&cfg), "--stages", "sample"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let o = kc(&["run", "--config", s(&cfg), "--stages", "infer"]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("run `discover` first"));
    assert_eq!(
        code(&kc(&["run", "--config", s(&cfg), "--stages", "train"])),
        1
    );
}

#[test]
fn templates_written_for_editing() {
    let dir = tempfile::tempdir().unwrap();
    let o = kc(&["templates", "--out", s(dir.path())]);
    assert_eq!(code(&o), 0);
    let kc_section = std::fs::read_to_string(dir.path().join("kc_section.txt")).unwrap();
    assert!(kc_section.contains("### KC TARGETS"));
}

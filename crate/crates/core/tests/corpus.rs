//! Corpus loading, last-incorrect selection and sampling.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use chrono::{TimeZone, Utc};
use kc_core::corpus::{
    last_incorrect_attempts, load_corpus, sample_submissions, Corpus, CorpusError, Problem,
    Submission,
};

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures/corpus")
        .join(name)
}

fn problems() -> PathBuf {
    fixture("problems.jsonl")
}

fn sub(id: &str, student: &str, t: i64, correct: bool) -> Submission {
    Submission {
        submission_id: id.into(),
        student_id: student.into(),
        problem_id: "p1".into(),
        timestamp: Utc.timestamp_millis_opt(t).unwrap(),
        code: format!("int v{t} = {t};"),
        is_correct: correct,
    }
}

fn one_problem(subs: Vec<Submission>) -> Corpus {
    Corpus::new(
        vec![Problem {
            problem_id: "p1".into(),
            title: "t".into(),
            statement: "s".into(),
        }],
        subs,
    )
    .unwrap()
}

#[test]
fn three_record_file_loads_in_order() {
    let c = load_corpus(&fixture("three.jsonl"), Some(&problems())).unwrap();
    let ids: Vec<_> = c
        .submissions
        .iter()
        .map(|s| s.submission_id.as_str())
        .collect();
    assert_eq!(ids, ["a1", "a2", "a3"]);
    assert_eq!(c.submissions[2].timestamp.timestamp_millis() % 1000, 250);
    assert!(c.submissions[1].is_correct);
}

#[test]
fn missing_field_names_line_two() {
    let err = load_corpus(&fixture("missing_field.jsonl"), Some(&problems())).unwrap_err();
    match &err {
        CorpusError::Record { line, message, .. } => {
            assert_eq!(*line, 2);
            assert!(message.contains("is_correct"), "{message}");
        }
        other => panic!("unexpected error {other:?}"),
    }
    assert!(err.to_string().contains("line 2"));
}

#[test]
fn unknown_problems_listed() {
    let err = load_corpus(&fixture("unknown_problem.jsonl"), Some(&problems())).unwrap_err();
    match err {
        CorpusError::UnknownProblems(ids) => assert_eq!(ids, ["p9", "p7"]),
        other => panic!("unexpected error {other:?}"),
    }
}

#[test]
fn per_problem_counts() {
    let c = load_corpus(&fixture("ten.jsonl"), Some(&problems())).unwrap();
    assert_eq!(c.submissions.len(), 10);
    let want: BTreeMap<String, usize> = [("p1".to_string(), 6), ("p2".to_string(), 4)].into();
    assert_eq!(c.counts_by_problem(), want);
}

#[test]
fn sidecar_problems_default() {
    let c = load_corpus(&fixture("three.jsonl"), None).unwrap();
    assert_eq!(c.problems.len(), 2);
}

#[test]
fn last_incorrect_matches_exhaustive_scan() {
    let c = load_corpus(&fixture("ten.jsonl"), Some(&problems())).unwrap();
    let got = last_incorrect_attempts(&c, "p1").unwrap();
    assert_eq!(got.len(), 3);

    // brute force: for every student, scan all of their incorrect p1 records
    let students: BTreeSet<&str> = c
        .submissions
        .iter()
        .map(|s| s.student_id.as_str())
        .collect();
    let mut want = Vec::new();
    for st in students {
        let mut best: Option<&Submission> = None;
        for s in &c.submissions {
            if s.student_id == st && s.problem_id == "p1" && !s.is_correct {
                let better = match best {
                    None => true,
                    Some(b) => (s.timestamp, &s.submission_id) > (b.timestamp, &b.submission_id),
                };
                if better {
                    best = Some(s);
                }
            }
        }
        want.extend(best.cloned());
    }
    assert_eq!(got, want);
    let ids: Vec<_> = got.iter().map(|s| s.submission_id.as_str()).collect();
    assert_eq!(ids, ["t02", "t04", "t06"]);
}

#[test]
fn latest_incorrect_and_correct_only_students() {
    let c = one_problem(vec![
        sub("x1", "s1", 1, false),
        sub("x2", "s1", 2, true),
        sub("x3", "s1", 3, false),
        sub("y1", "s2", 1, true),
        sub("y2", "s2", 9, true),
    ]);
    let got = last_incorrect_attempts(&c, "p1").unwrap();
    assert_eq!(got.len(), 1);
    assert_eq!(got[0].submission_id, "x3");
    assert!(got.iter().all(|s| !s.is_correct));
}

#[test]
fn sample_whole_population_when_small() {
    let cands: Vec<_> = (0..50)
        .map(|i| sub(&format!("s{i:03}"), "u", i, false))
        .collect();
    assert_eq!(sample_submissions(&cands, 50, 3).unwrap(), cands);
    assert_eq!(sample_submissions(&cands, 80, 3).unwrap(), cands);
}

#[test]
fn sample_is_deterministic_subset() {
    let cands: Vec<_> = (0..100)
        .map(|i| sub(&format!("s{i:03}"), "u", i, false))
        .collect();
    let a = sample_submissions(&cands, 50, 7).unwrap();
    let b = sample_submissions(&cands, 50, 7).unwrap();
    assert_eq!(
        serde_json::to_vec(&a).unwrap(),
        serde_json::to_vec(&b).unwrap()
    );
    let ids: BTreeSet<_> = a.iter().map(|s| s.submission_id.clone()).collect();
    assert_eq!(ids.len(), 50);
    assert!(a.iter().all(|s| cands.contains(s)));
}

#[test]
fn sample_errors() {
    assert!(matches!(
        sample_submissions(&[], 5, 0),
        Err(CorpusError::EmptyCandidates)
    ));
    let cands = vec![sub("a", "u", 1, false)];
    assert!(matches!(
        sample_submissions(&cands, 0, 0),
        Err(CorpusError::ZeroSampleSize)
    ));
}

#[test]
fn inclusion_frequency_is_uniform() {
    let cands: Vec<_> = (0..100)
        .map(|i| sub(&format!("s{i:03}"), "u", i, false))
        .collect();
    let index: BTreeMap<_, _> = cands
        .iter()
        .enumerate()
        .map(|(i, s)| (s.submission_id.clone(), i))
        .collect();
    let trials = 10_000u64;
    let mut hits = vec![0u32; cands.len()];
    for seed in 0..trials {
        for s in sample_submissions(&cands, 50, seed).unwrap() {
            hits[index[&s.submission_id]] += 1;
        }
    }
    for (i, h) in hits.iter().enumerate() {
        let freq = f64::from(*h) / trials as f64;
        assert!((freq - 0.5).abs() <= 0.02, "element {i}: {freq}");
    }
}

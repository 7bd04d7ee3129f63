//! Submission corpus: JSONL ingestion, last-incorrect-attempt selection and
//! seeded sampling.
//!
//! Submissions live in a JSONL file (one record per line) and problem
//! statements in a sidecar `problems.jsonl`. Records keep their input order.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::Write;
use std::path::Path;

use chrono::{DateTime, SecondsFormat, Utc};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::rng::PortableRng;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{file} line {line}: {message}")]
    Record {
        file: String,
        line: usize,
        message: String,
    },
    #[error("submissions reference unknown problems: {0:?}")]
    UnknownProblems(Vec<String>),
    #[error("duplicate submission_id {0}")]
    DuplicateSubmission(String),
    #[error("unknown problem_id {0}")]
    UnknownProblem(String),
    #[error("no candidates to sample from")]
    EmptyCandidates,
    #[error("sample size must be at least 1")]
    ZeroSampleSize,
}

/// Serde adapter for UTC instants, written with millisecond precision.
pub mod timestamp_ms {
    use super::*;

    pub fn serialize<S: Serializer>(t: &DateTime<Utc>, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&t.to_rfc3339_opts(SecondsFormat::Millis, true))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DateTime<Utc>, D::Error> {
        let raw = String::deserialize(d)?;
        DateTime::parse_from_rfc3339(&raw)
            .map(|t| t.with_timezone(&Utc))
            .map_err(|e| serde::de::Error::custom(format!("bad timestamp {raw:?}: {e}")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Submission {
    pub submission_id: String,
    pub student_id: String,
    pub problem_id: String,
    #[serde(with = "timestamp_ms")]
    pub timestamp: DateTime<Utc>,
    pub code: String,
    pub is_correct: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Problem {
    pub problem_id: String,
    pub title: String,
    pub statement: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Corpus {
    pub problems: BTreeMap<String, Problem>,
    pub submissions: Vec<Submission>,
}

impl Corpus {
    /// Builds a corpus, checking id uniqueness and problem references.
    pub fn new(problems: Vec<Problem>, submissions: Vec<Submission>) -> Result<Self, CorpusError> {
        let problems: BTreeMap<_, _> = problems
            .into_iter()
            .map(|p| (p.problem_id.clone(), p))
            .collect();
        let mut seen = HashSet::new();
        let mut unknown = Vec::new();
        for s in &submissions {
            if !seen.insert(s.submission_id.as_str()) {
                return Err(CorpusError::DuplicateSubmission(s.submission_id.clone()));
            }
            if !problems.contains_key(&s.problem_id) && !unknown.contains(&s.problem_id) {
                unknown.push(s.problem_id.clone());
            }
        }
        if !unknown.is_empty() {
            return Err(CorpusError::UnknownProblems(unknown));
        }
        Ok(Self {
            problems,
            submissions,
        })
    }

    pub fn problem(&self, problem_id: &str) -> Option<&Problem> {
        self.problems.get(problem_id)
    }

    pub fn submission(&self, submission_id: &str) -> Option<&Submission> {
        self.submissions
            .iter()
            .find(|s| s.submission_id == submission_id)
    }

    /// Submission counts grouped by problem.
    pub fn counts_by_problem(&self) -> BTreeMap<String, usize> {
        let mut counts = BTreeMap::new();
        for s in &self.submissions {
            *counts.entry(s.problem_id.clone()).or_insert(0) += 1;
        }
        counts
    }
}

fn read_to_string(path: &Path) -> Result<String, CorpusError> {
    fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Parses JSONL records, reporting the 1-based line number of the first bad
/// record. Blank lines are skipped.
pub fn parse_jsonl<T: for<'de> Deserialize<'de>>(
    text: &str,
    file: &str,
) -> Result<Vec<T>, CorpusError> {
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(line).map_err(|e| CorpusError::Record {
            file: file.to_string(),
            line: idx + 1,
            message: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}

fn validate_submissions(subs: &[Submission], file: &str, text: &str) -> Result<(), CorpusError> {
    // line numbers of non-blank records, to point errors at the right line
    let lines: Vec<usize> = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, _)| i + 1)
        .collect();
    for (s, line) in subs.iter().zip(lines) {
        if s.code.trim().is_empty() {
            return Err(CorpusError::Record {
                file: file.to_string(),
                line,
                message: "empty code".into(),
            });
        }
    }
    Ok(())
}

/// Path of the problems sidecar for a submissions file.
pub fn sidecar_problems_path(submissions: &Path) -> std::path::PathBuf {
    submissions.with_file_name("problems.jsonl")
}

/// Loads `submissions` plus the problem sidecar. When `problems` is `None` the
/// sidecar is `problems.jsonl` next to the submissions file.
pub fn load_corpus(submissions: &Path, problems: Option<&Path>) -> Result<Corpus, CorpusError> {
    let problems_path = problems
        .map(Path::to_path_buf)
        .unwrap_or_else(|| sidecar_problems_path(submissions));
    let sub_text = read_to_string(submissions)?;
    let sub_name = submissions.display().to_string();
    let subs: Vec<Submission> = parse_jsonl(&sub_text, &sub_name)?;
    validate_submissions(&subs, &sub_name, &sub_text)?;
    let prob_text = read_to_string(&problems_path)?;
    let prob_name = problems_path.display().to_string();
    let probs: Vec<Problem> = parse_jsonl(&prob_text, &prob_name)?;
    for (i, p) in probs.iter().enumerate() {
        if p.statement.trim().is_empty() {
            return Err(CorpusError::Record {
                file: prob_name.clone(),
                line: i + 1,
                message: "empty statement".into(),
            });
        }
    }
    Corpus::new(probs, subs)
}

/// Writes records as JSONL, one per line, trailing newline included.
pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> std::io::Result<()> {
    let mut buf = Vec::new();
    for r in records {
        serde_json::to_writer(&mut buf, r)?;
        buf.push(b'\n');
    }
    let mut f = fs::File::create(path)?;
    f.write_all(&buf)
}

/// Each student's last incorrect attempt at `problem_id`, sorted by student.
///
/// Ties on timestamp go to the lexicographically largest `submission_id`.
pub fn last_incorrect_attempts(
    corpus: &Corpus,
    problem_id: &str,
) -> Result<Vec<Submission>, CorpusError> {
    if !corpus.problems.contains_key(problem_id) {
        return Err(CorpusError::UnknownProblem(problem_id.to_string()));
    }
    let mut latest: BTreeMap<&str, &Submission> = BTreeMap::new();
    for s in corpus
        .submissions
        .iter()
        .filter(|s| s.problem_id == problem_id && !s.is_correct)
    {
        latest
            .entry(s.student_id.as_str())
            .and_modify(|cur| {
                if (s.timestamp, &s.submission_id) > (cur.timestamp, &cur.submission_id) {
                    *cur = s;
                }
            })
            .or_insert(s);
    }
    Ok(latest.into_values().cloned().collect())
}

/// Uniform sample of `n` candidates without replacement, returned in
/// candidate order. Uses a partial Fisher-Yates shuffle over indices driven
/// by [`PortableRng`], so output depends only on `(candidates, n, seed)`.
pub fn sample_submissions(
    candidates: &[Submission],
    n: usize,
    seed: u64,
) -> Result<Vec<Submission>, CorpusError> {
    if n == 0 {
        return Err(CorpusError::ZeroSampleSize);
    }
    if candidates.is_empty() {
        return Err(CorpusError::EmptyCandidates);
    }
    if candidates.len() <= n {
        return Ok(candidates.to_vec());
    }
    let mut rng = PortableRng::new(seed);
    let mut picked = rng.sample_indices(candidates.len(), n);
    picked.sort_unstable();
    Ok(picked.into_iter().map(|i| candidates[i].clone()).collect())
}

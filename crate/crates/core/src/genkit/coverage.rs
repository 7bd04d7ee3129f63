//! Machine pre-screen of whether a worked example covers its KC targets.
//!
//! `in_text`: at least half of the label's content words (stopwords
//! dropped, lowercased, a plural `s` stripped) occur in the overview or a
//! step explanation.
//!
//! `in_code`: the concatenated step code parses and contains a candidate
//! subtree with the target pattern's root kind whose signature (operators,
//! keywords and placeholder classes) includes the pattern's. An exact
//! normalized token match also counts. This accepts the corrected form of
//! a construct, such as a grouped `&&`/`||` condition for a pattern mined
//! from an ungrouped one.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::{GenkitError, KcLabel, WorkedExample};
use crate::ast::{normalized_subtrees, Language, Placeholder};

/// Root kind and normalized tokens of a target's supporting subtree.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatternRef {
    pub kind: String,
    pub tokens: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoverageTarget {
    pub label: KcLabel,
    pub pattern: Option<PatternRef>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoverageResult {
    pub in_code: bool,
    pub in_text: bool,
}

const STOPWORDS: &[&str] = &[
    "a", "an", "the", "of", "in", "on", "for", "to", "and", "or", "with", "without", "by", "at",
    "from", "into", "as", "is", "are", "be", "using", "use", "vs", "versus", "its", "their",
];

fn words(text: &str) -> Vec<String> {
    text.split(|c: char| !(c.is_alphanumeric() || c == '_'))
        .filter(|w| !w.is_empty())
        .map(|w| {
            let w = w.to_lowercase();
            match w.strip_suffix('s') {
                Some(stem) if stem.len() >= 3 && !stem.ends_with('s') => stem.to_string(),
                _ => w,
            }
        })
        .collect()
}

fn content_words(label: &str) -> BTreeSet<String> {
    words(label)
        .into_iter()
        .filter(|w| !STOPWORDS.contains(&w.as_str()))
        .collect()
}

fn in_text(example: &WorkedExample, label: &str) -> bool {
    let wanted = content_words(label);
    if wanted.is_empty() {
        return false;
    }
    let mut have: BTreeSet<String> = words(&example.overview).into_iter().collect();
    for s in &example.steps {
        have.extend(words(&s.explanation));
    }
    let hits = wanted.iter().filter(|w| have.contains(*w)).count();
    2 * hits >= wanted.len()
}

fn is_signature_token(t: &str) -> bool {
    Placeholder::parse(t).is_some()
        || !matches!(t, "(" | ")" | "[" | "]" | "{" | "}" | ";" | "," | ".")
}

fn signature(tokens: &[String]) -> BTreeSet<&str> {
    tokens
        .iter()
        .map(String::as_str)
        .filter(|t| is_signature_token(t))
        .collect()
}

fn in_code(code: &str, pattern: &PatternRef) -> Result<bool, crate::ast::SubtreeError> {
    let want = signature(&pattern.tokens);
    let subs = normalized_subtrees(code, Language::Java, 1, usize::MAX)?;
    Ok(subs.iter().any(|s| {
        s.tokens == pattern.tokens
            || (s.kind == pattern.kind && !want.is_empty() && want.is_subset(&signature(&s.tokens)))
    }))
}

/// Per-target coverage flags, in target order. Step code that does not
/// parse makes `in_code` false and logs a warning.
pub fn kc_coverage_heuristic(
    example: &WorkedExample,
    targets: &[CoverageTarget],
) -> Result<Vec<CoverageResult>, GenkitError> {
    if targets.is_empty() {
        return Err(GenkitError::ConditionedWithoutTargets);
    }
    let code = example.code();
    Ok(targets
        .iter()
        .map(|t| {
            let in_code = match &t.pattern {
                None => false,
                Some(p) => in_code(&code, p).unwrap_or_else(|e| {
                    log::warn!("coverage: step code does not parse ({e}); in_code = false");
                    false
                }),
            };
            CoverageResult {
                in_code,
                in_text: in_text(example, &t.label.label),
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn word_normalization() {
        assert_eq!(
            words("Loops, Bounds & Off-by-one"),
            ["loop", "bound", "off", "by", "one"]
        );
        assert_eq!(words("class boss"), ["class", "boss"]);
        assert_eq!(
            content_words("Use of the equals method")
                .into_iter()
                .collect::<Vec<_>>(),
            ["equal", "method"]
        );
    }

    #[test]
    fn signature_skips_punctuation() {
        let t: Vec<String> = "VAR [ VAR ] == NUM && ( VAR )"
            .split(' ')
            .map(String::from)
            .collect();
        assert_eq!(
            signature(&t).into_iter().collect::<Vec<_>>(),
            ["&&", "==", "NUM", "VAR"]
        );
    }
}

//! Prompt construction, response parsing and KC coverage screening for
//! LLM-generated worked examples.
//!
//! Worked-example responses follow a tagged plain-text layout:
//!
//! ````text
//! QUESTION: <problem statement>
//! OVERVIEW: <approach>
//! STEP 1: <explanation>
//! ```java
//! <code>
//! ```
//! STEP 2: ...
//! ````
//!
//! Enrichment responses are two lines, `LABEL: <2-6 words>` and
//! `DESC: <one sentence>`.

mod coverage;
mod llm;

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use coverage::{kc_coverage_heuristic, CoverageResult, CoverageTarget, PatternRef};
pub use llm::{
    complete_and_parse, request_hash, ChatMessage, ChatRequest, Completer, FnCompleter,
    HttpCompleter, LlmConfig, LlmError, ReplayCompleter, Transcript, TranscriptStore,
};

use crate::corpus::{Problem, Submission};
use crate::discovery::{DiscoveryError, KcMeta};

pub const KC_SECTION_MARKER: &str = "### KC TARGETS";
pub const MIN_STEPS: usize = 3;
pub const MAX_STEPS: usize = 10;

#[derive(Debug, Error, PartialEq)]
pub enum GenkitError {
    #[error("unresolved template placeholder {{{{{0}}}}}")]
    UnresolvedPlaceholder(String),
    #[error("unterminated placeholder at byte {0}")]
    UnterminatedPlaceholder(usize),
    #[error("empty snippet")]
    EmptySnippet,
    #[error("baseline prompts take no KC targets")]
    BaselineWithTargets,
    #[error("KC-conditioned prompts need at least one KC target")]
    ConditionedWithoutTargets,
    #[error("invalid KC label: {0}")]
    Label(String),
    #[error("response format: {0}")]
    Format(String),
    #[error("template {name}: {message}")]
    Template { name: String, message: String },
}

impl From<DiscoveryError> for GenkitError {
    fn from(e: DiscoveryError) -> Self {
        match e {
            DiscoveryError::Label(m) => GenkitError::Label(m),
            other => GenkitError::Label(other.to_string()),
        }
    }
}

/// A validated KC name and description.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KcLabel {
    pub kc_id: usize,
    pub label: String,
    pub description: String,
}

impl KcLabel {
    pub fn new(kc_id: usize, label: &str, description: &str) -> Result<Self, GenkitError> {
        let meta = KcMeta::new(label, description)?;
        Ok(Self {
            kc_id,
            label: meta.label,
            description: meta.description,
        })
    }

    pub fn meta(&self) -> KcMeta {
        KcMeta {
            label: self.label.clone(),
            description: self.description.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExampleVariant {
    Baseline,
    KcConditioned,
}

impl ExampleVariant {
    pub const BOTH: [ExampleVariant; 2] = [Self::Baseline, Self::KcConditioned];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Baseline => "baseline",
            Self::KcConditioned => "kc_conditioned",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptVariant {
    Baseline,
    KcConditioned,
    Enrichment,
}

impl From<ExampleVariant> for PromptVariant {
    fn from(v: ExampleVariant) -> Self {
        match v {
            ExampleVariant::Baseline => Self::Baseline,
            ExampleVariant::KcConditioned => Self::KcConditioned,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub system_text: String,
    pub user_text: String,
    pub variant: PromptVariant,
    pub substitutions: BTreeMap<String, String>,
}

/// Replaces every `{{name}}` in `template` with `values[name]` in a single
/// pass. Substituted text is not rescanned.
pub fn substitute(
    template: &str,
    values: &BTreeMap<String, String>,
) -> Result<String, GenkitError> {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    let mut offset = 0;
    while let Some(start) = rest.find("{{") {
        out.push_str(&rest[..start]);
        let after = &rest[start + 2..];
        let end = after
            .find("}}")
            .ok_or(GenkitError::UnterminatedPlaceholder(offset + start))?;
        let name = after[..end].trim();
        let value = values
            .get(name)
            .ok_or_else(|| GenkitError::UnresolvedPlaceholder(name.to_string()))?;
        out.push_str(value);
        let consumed = start + 2 + end + 2;
        offset += consumed;
        rest = &rest[consumed..];
    }
    out.push_str(rest);
    Ok(out)
}

/// Editable prompt templates. Defaults are compiled in; a directory may
/// override any subset by file name.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Templates {
    pub worked_example_system: String,
    pub worked_example_user: String,
    pub kc_section: String,
    pub enrichment_system: String,
    pub enrichment_user: String,
    pub format_reminder: String,
}

const TEMPLATE_FILES: [&str; 6] = [
    "worked_example_system.txt",
    "worked_example_user.txt",
    "kc_section.txt",
    "enrichment_system.txt",
    "enrichment_user.txt",
    "format_reminder.txt",
];

impl Default for Templates {
    fn default() -> Self {
        Self {
            worked_example_system: include_str!("../../templates/worked_example_system.txt").into(),
            worked_example_user: include_str!("../../templates/worked_example_user.txt").into(),
            kc_section: include_str!("../../templates/kc_section.txt").into(),
            enrichment_system: include_str!("../../templates/enrichment_system.txt").into(),
            enrichment_user: include_str!("../../templates/enrichment_user.txt").into(),
            format_reminder: include_str!("../../templates/format_reminder.txt").into(),
        }
    }
}

impl Templates {
    pub fn load_dir(dir: &Path) -> Result<Self, GenkitError> {
        let mut t = Self::default();
        for name in TEMPLATE_FILES {
            let path = dir.join(name);
            if !path.exists() {
                continue;
            }
            let text = fs::read_to_string(&path).map_err(|e| GenkitError::Template {
                name: name.to_string(),
                message: e.to_string(),
            })?;
            *t.slot(name) = text;
        }
        if !t.kc_section.contains(KC_SECTION_MARKER) {
            return Err(GenkitError::Template {
                name: "kc_section.txt".into(),
                message: format!("must contain the marker {KC_SECTION_MARKER:?}"),
            });
        }
        Ok(t)
    }

    pub fn write_dir(&self, dir: &Path) -> std::io::Result<()> {
        fs::create_dir_all(dir)?;
        let mut t = self.clone();
        for name in TEMPLATE_FILES {
            fs::write(dir.join(name), t.slot(name).as_str())?;
        }
        Ok(())
    }

    fn slot(&mut self, name: &str) -> &mut String {
        match name {
            "worked_example_system.txt" => &mut self.worked_example_system,
            "worked_example_user.txt" => &mut self.worked_example_user,
            "kc_section.txt" => &mut self.kc_section,
            "enrichment_system.txt" => &mut self.enrichment_system,
            "enrichment_user.txt" => &mut self.enrichment_user,
            _ => &mut self.format_reminder,
        }
    }
}

fn bundle(
    system: &str,
    user: &str,
    variant: PromptVariant,
    substitutions: BTreeMap<String, String>,
) -> Result<PromptBundle, GenkitError> {
    Ok(PromptBundle {
        system_text: substitute(system, &substitutions)?,
        user_text: substitute(user, &substitutions)?,
        variant,
        substitutions,
    })
}

pub fn build_enrichment_prompt(
    templates: &Templates,
    problem: &Problem,
    submission: &Submission,
    snippet: &str,
    kc_id: usize,
) -> Result<PromptBundle, GenkitError> {
    if snippet.trim().is_empty() {
        return Err(GenkitError::EmptySnippet);
    }
    let subs = BTreeMap::from([
        ("problem_statement".to_string(), problem.statement.clone()),
        ("student_code".to_string(), submission.code.clone()),
        ("snippet".to_string(), snippet.to_string()),
        ("kc_id".to_string(), kc_id.to_string()),
    ]);
    bundle(
        &templates.enrichment_system,
        &templates.enrichment_user,
        PromptVariant::Enrichment,
        subs,
    )
}

fn tagged_value<'a>(line: &'a str, tag: &str) -> Option<&'a str> {
    let l = line.trim_start_matches(['*', '#', ' ']);
    let head = l.get(..tag.len())?;
    if !head.eq_ignore_ascii_case(tag) {
        return None;
    }
    Some(l[tag.len()..].trim_start_matches('*').trim())
}

/// Reads `LABEL:` and `DESC:` lines and validates them.
pub fn parse_enrichment_response(text: &str, kc_id: usize) -> Result<KcLabel, GenkitError> {
    let mut label = None;
    let mut desc: Option<String> = None;
    let mut in_desc = false;
    for line in text.lines() {
        if let Some(v) = tagged_value(line, "LABEL:") {
            label = Some(v.to_string());
            in_desc = false;
        } else if let Some(v) =
            tagged_value(line, "DESC:").or_else(|| tagged_value(line, "DESCRIPTION:"))
        {
            desc = Some(v.to_string());
            in_desc = true;
        } else if in_desc && !line.trim().is_empty() {
            // a wrapped description stays one sentence
            let d = desc.get_or_insert_with(String::new);
            d.push(' ');
            d.push_str(line.trim());
        }
    }
    let label = label.ok_or_else(|| GenkitError::Format("missing LABEL: line".into()))?;
    let desc = desc.ok_or_else(|| GenkitError::Format("missing DESC: line".into()))?;
    KcLabel::new(kc_id, &label, &desc)
}

fn kc_list(targets: &[KcLabel]) -> String {
    targets
        .iter()
        .map(|t| format!("- {}: {}", t.label, t.description))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Shared worked-example prompt. The conditioned variant fills the KC
/// section; the baseline substitutes an empty string for it, so the two
/// differ only there.
pub fn build_worked_example_prompt(
    templates: &Templates,
    problem: &Problem,
    submission: &Submission,
    variant: ExampleVariant,
    targets: &[KcLabel],
) -> Result<PromptBundle, GenkitError> {
    let kc_section = match variant {
        ExampleVariant::Baseline if !targets.is_empty() => {
            return Err(GenkitError::BaselineWithTargets)
        }
        ExampleVariant::KcConditioned if targets.is_empty() => {
            return Err(GenkitError::ConditionedWithoutTargets)
        }
        ExampleVariant::Baseline => String::new(),
        ExampleVariant::KcConditioned => substitute(
            &templates.kc_section,
            &BTreeMap::from([("kc_list".to_string(), kc_list(targets))]),
        )?,
    };
    let subs = BTreeMap::from([
        ("problem_statement".to_string(), problem.statement.clone()),
        ("student_code".to_string(), submission.code.clone()),
        ("kc_section".to_string(), kc_section),
    ]);
    bundle(
        &templates.worked_example_system,
        &templates.worked_example_user,
        variant.into(),
        subs,
    )
}

/// `bundle` with the format reminder appended to the user message.
pub fn with_format_reminder(
    templates: &Templates,
    bundle: &PromptBundle,
    error: &str,
) -> Result<PromptBundle, GenkitError> {
    let reminder = substitute(
        &templates.format_reminder,
        &BTreeMap::from([("error".to_string(), error.to_string())]),
    )?;
    let mut b = bundle.clone();
    b.user_text.push_str(&reminder);
    Ok(b)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Step {
    pub explanation: String,
    pub code: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkedExample {
    pub question: String,
    pub overview: String,
    pub steps: Vec<Step>,
    pub variant: ExampleVariant,
    pub kc_targets: Vec<KcLabel>,
}

impl WorkedExample {
    /// Step code joined in order.
    pub fn code(&self) -> String {
        self.steps
            .iter()
            .map(|s| s.code.as_str())
            .collect::<Vec<_>>()
            .join("\n")
    }
}

fn step_header(line: &str) -> Option<(usize, &str)> {
    let l = line.trim_start_matches(['*', '#', ' ']);
    let head = l.get(..4)?;
    if !head.eq_ignore_ascii_case("step") {
        return None;
    }
    let rest = l[4..].trim_start();
    let digits = rest.bytes().take_while(u8::is_ascii_digit).count();
    if digits == 0 {
        return None;
    }
    let n = rest[..digits].parse().ok()?;
    let after = rest[digits..].trim_start_matches('*');
    let after = after
        .strip_prefix(':')
        .or_else(|| after.strip_prefix('.'))?;
    Some((n, after.trim_start_matches('*').trim()))
}

fn is_fence(line: &str) -> bool {
    line.trim_start().starts_with("```")
}

fn join_prose(lines: &[&str]) -> String {
    lines
        .iter()
        .map(|l| l.trim())
        .filter(|l| !l.is_empty())
        .collect::<Vec<_>>()
        .join(" ")
}

fn trim_code(lines: &[&str]) -> String {
    let start = lines.iter().position(|l| !l.trim().is_empty());
    let end = lines.iter().rposition(|l| !l.trim().is_empty());
    match (start, end) {
        (Some(s), Some(e)) => lines[s..=e].join("\n"),
        _ => String::new(),
    }
}

/// Parses a tagged worked-example response. If any step uses a fenced code
/// block, every step must; otherwise each step's explanation is its header
/// line and its code is the lines that follow.
pub fn parse_worked_example(
    text: &str,
    variant: ExampleVariant,
    targets: &[KcLabel],
) -> Result<WorkedExample, GenkitError> {
    let fmt = |m: String| GenkitError::Format(m);
    match variant {
        ExampleVariant::Baseline if !targets.is_empty() => {
            return Err(GenkitError::BaselineWithTargets)
        }
        ExampleVariant::KcConditioned if targets.is_empty() => {
            return Err(GenkitError::ConditionedWithoutTargets)
        }
        _ => {}
    }
    let lines: Vec<&str> = text.lines().collect();
    let q = lines
        .iter()
        .position(|l| tagged_value(l, "QUESTION:").is_some())
        .ok_or_else(|| fmt("missing QUESTION:".into()))?;
    let o = lines
        .iter()
        .position(|l| tagged_value(l, "OVERVIEW:").is_some())
        .ok_or_else(|| fmt("missing OVERVIEW:".into()))?;
    if o < q {
        return Err(fmt("OVERVIEW: precedes QUESTION:".into()));
    }
    let headers: Vec<(usize, usize)> = lines
        .iter()
        .enumerate()
        .skip(o + 1)
        .filter_map(|(i, l)| step_header(l).map(|(n, _)| (i, n)))
        .collect();
    let first_step = headers.first().map_or(lines.len(), |h| h.0);
    let mut question = vec![tagged_value(lines[q], "QUESTION:").unwrap()];
    question.extend(&lines[q + 1..o]);
    let mut overview = vec![tagged_value(lines[o], "OVERVIEW:").unwrap()];
    overview.extend(&lines[o + 1..first_step]);
    let question = join_prose(&question);
    let overview = join_prose(&overview);
    if question.is_empty() {
        return Err(fmt("empty question".into()));
    }
    if overview.is_empty() {
        return Err(fmt("empty overview".into()));
    }
    if headers.len() < MIN_STEPS || headers.len() > MAX_STEPS {
        return Err(fmt(format!(
            "{} steps, expected {MIN_STEPS} to {MAX_STEPS}",
            headers.len()
        )));
    }
    let fenced = lines[first_step..].iter().any(|l| is_fence(l));
    let mut steps = Vec::with_capacity(headers.len());
    for (k, &(start, n)) in headers.iter().enumerate() {
        if n != k + 1 {
            return Err(fmt(format!("step {} is numbered {n}", k + 1)));
        }
        let end = headers.get(k + 1).map_or(lines.len(), |h| h.0);
        let head = step_header(lines[start]).unwrap().1;
        let body = &lines[start + 1..end];
        let (explanation, code) = if fenced {
            let open = body.iter().position(|l| is_fence(l));
            let Some(open) = open else {
                return Err(fmt(format!("step {n} has no code block")));
            };
            let close = body[open + 1..]
                .iter()
                .position(|l| is_fence(l))
                .map(|c| open + 1 + c)
                .ok_or_else(|| fmt(format!("step {n} has an unclosed code block")))?;
            let mut prose = vec![head];
            prose.extend(&body[..open]);
            prose.extend(&body[close + 1..]);
            (join_prose(&prose), trim_code(&body[open + 1..close]))
        } else {
            (head.trim().to_string(), trim_code(body))
        };
        if explanation.is_empty() {
            return Err(fmt(format!("step {n} has no explanation")));
        }
        if code.trim().is_empty() {
            return Err(fmt(format!("step {n} has no code")));
        }
        steps.push(Step { explanation, code });
    }
    Ok(WorkedExample {
        question,
        overview,
        steps,
        variant,
        kc_targets: targets.to_vec(),
    })
}

/// Canonical text form; `parse_worked_example` inverts it.
pub fn render(example: &WorkedExample) -> String {
    let mut out = format!(
        "QUESTION: {}\n\nOVERVIEW: {}\n",
        example.question, example.overview
    );
    for (i, s) in example.steps.iter().enumerate() {
        out.push_str(&format!(
            "\nSTEP {}: {}\n```java\n{}\n```\n",
            i + 1,
            s.explanation,
            s.code
        ));
    }
    out
}

//! Synthetic submission corpus with planted bug patterns.
//!
//! Two exercises are generated: an array rearrangement task (`fix45`) and a
//! string repetition task (`repeatEnd`). A submission is incorrect exactly
//! when it contains one of four planted patterns:
//!
//! | pattern               | example                                          |
//! |-----------------------|--------------------------------------------------|
//! | `MixedAndOr`          | `i == 0 && a[i] == 5 \|\| a[i] == 5 && a[i-1] != 4` |
//! | `InclusiveLoopBound`  | `i <= a.length`                                  |
//! | `StringIdentity`      | `s == ""`                                        |
//! | `SubstringOffByOne`   | `s.length() - n - 1`                             |
//!
//! Identifier names, literal spellings, optional statements and solution
//! shape vary per submission, so the same pattern appears with many surface
//! forms but one normalized token sequence.

use std::collections::BTreeMap;

use chrono::{DateTime, Duration, TimeZone, Utc};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ast::{normalized_subtrees, Language};
use crate::corpus::{Corpus, Problem, Submission};

pub const FIX45: &str = "fix45";
pub const REPEAT_END: &str = "repeatEnd";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum PlantedPattern {
    MixedAndOr,
    InclusiveLoopBound,
    StringIdentity,
    SubstringOffByOne,
}

impl PlantedPattern {
    pub const ALL: [PlantedPattern; 4] = [
        Self::MixedAndOr,
        Self::InclusiveLoopBound,
        Self::StringIdentity,
        Self::SubstringOffByOne,
    ];

    /// A canonical instance of the pattern as an expression.
    pub fn example(self) -> &'static str {
        match self {
            Self::MixedAndOr => "i == 0 && nums[i] == 5 || nums[i] == 5 && nums[i - 1] != 4",
            Self::InclusiveLoopBound => "i <= nums.length",
            Self::StringIdentity => "str == \"\"",
            Self::SubstringOffByOne => "str.length() - n - 1",
        }
    }

    /// Normalized tokens of the pattern's root expression.
    pub fn tokens(self) -> Vec<String> {
        let src = format!("x = {};", self.example());
        let subs = normalized_subtrees(&src, Language::Java, 1, usize::MAX)
            .expect("pattern example parses");
        // the assignment's right-hand side is the second candidate in pre-order
        subs.into_iter()
            .find(|s| s.span.0 == 4 && s.span.1 == src.len() - 1)
            .expect("pattern root extracted")
            .tokens
    }

    pub fn problem(self) -> &'static str {
        match self {
            Self::MixedAndOr | Self::InclusiveLoopBound => FIX45,
            Self::StringIdentity | Self::SubstringOffByOne => REPEAT_END,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    /// Submissions per problem.
    pub per_problem: usize,
    pub max_attempts: usize,
    /// Probability that any single attempt is incorrect.
    pub incorrect_rate: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            per_problem: 100,
            max_attempts: 5,
            incorrect_rate: 0.5,
            seed: 2019,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub corpus: Corpus,
    /// Planted pattern per submission id; `None` for correct submissions.
    pub planted: BTreeMap<String, Option<PlantedPattern>>,
}

pub fn problems() -> Vec<Problem> {
    vec![
        Problem {
            problem_id: FIX45.into(),
            title: "fix45".into(),
            statement: "Return an array that contains exactly the same numbers as the given \
                        array, but rearranged so that every 4 is immediately followed by a 5. \
                        Do not move the 4's, but every other number may move. The array \
                        contains the same number of 4's and 5's, and every 4 has a number \
                        after it that is not a 4."
                .into(),
        },
        Problem {
            problem_id: REPEAT_END.into(),
            title: "repeatEnd".into(),
            statement: "Given a string and an int n, return a string made of n repetitions \
                        of the last n characters of the string. You may assume that n is \
                        between 0 and the length of the string, inclusive."
                .into(),
        },
    ]
}

const ARRAY_NAMES: &[&str] = &["nums", "arr", "a", "values", "numbers", "list", "data"];
const INDEX_NAMES: &[&str] = &["i", "j", "k", "idx", "x", "p"];
const INNER_NAMES: &[&str] = &["m", "q", "t", "y", "z", "w"];
const TEMP_NAMES: &[&str] = &["temp", "tmp", "other", "otherNum", "hold", "saved"];
const POS_NAMES: &[&str] = &["pos", "fiveSpot", "spot", "target", "loc"];
const STR_NAMES: &[&str] = &["str", "s", "word", "input", "text"];
const N_NAMES: &[&str] = &["n", "count", "num", "times", "len"];
const END_NAMES: &[&str] = &["end", "last", "tail", "suffix", "piece"];
const RES_NAMES: &[&str] = &["result", "res", "out", "answer", "built", "ret"];
const COUNTER_NAMES: &[&str] = &["counter", "c", "steps", "seen"];

fn pick<'a, R: Rng>(rng: &mut R, names: &[&'a str]) -> &'a str {
    names.choose(rng).expect("non-empty name pool")
}

/// Optional statements that appear regardless of correctness.
fn neutral_prefix<R: Rng>(rng: &mut R, ind: &str, lines: &mut Vec<String>) -> Option<String> {
    if rng.random_bool(0.35) {
        let c = pick(rng, COUNTER_NAMES);
        lines.push(format!("{ind}int {c} = 0;"));
        Some(c.to_string())
    } else {
        None
    }
}

fn fix45<R: Rng>(rng: &mut R, bug: Option<PlantedPattern>) -> String {
    let a = pick(rng, ARRAY_NAMES);
    let i = pick(rng, INDEX_NAMES);
    let mut j = pick(rng, INNER_NAMES);
    while j == i {
        j = pick(rng, INNER_NAMES);
    }
    let tmp = pick(rng, TEMP_NAMES);
    let bound_op = if bug == Some(PlantedPattern::InclusiveLoopBound) {
        "<="
    } else {
        "<"
    };
    let mut l = vec![format!("public int[] fix45(int[] {a}) {{")];
    if rng.random_bool(0.3) {
        l.push(format!("    if ({a}.length == 0) {{"));
        l.push(format!("        return {a};"));
        l.push("    }".into());
    }
    let counter = neutral_prefix(rng, "    ", &mut l);
    // MixedAndOr only fits the scan-for-five shape
    let shape = if bug == Some(PlantedPattern::MixedAndOr) {
        0
    } else {
        rng.random_range(0..2)
    };
    if shape == 0 {
        l.push(format!(
            "    for (int {i} = 0; {i} {bound_op} {a}.length; {i}++) {{"
        ));
        let cond = if bug == Some(PlantedPattern::MixedAndOr) {
            format!("{i} == 0 && {a}[{i}] == 5 || {a}[{i}] == 5 && {a}[{i} - 1] != 4")
        } else {
            match rng.random_range(0..3) {
                0 => format!("({i} == 0 && {a}[{i}] == 5) || ({a}[{i}] == 5 && {a}[{i} - 1] != 4)"),
                1 => format!("{a}[{i}] == 5 && ({i} == 0 || {a}[{i} - 1] != 4)"),
                _ => format!("({i} == 0 || {a}[{i} - 1] != 4) && {a}[{i}] == 5"),
            }
        };
        l.push(format!("        if ({cond}) {{"));
        if let Some(c) = &counter {
            l.push(format!("            {c}++;"));
        }
        l.push(format!(
            "            for (int {j} = 0; {j} < {a}.length - 1; {j}++) {{"
        ));
        l.push(format!(
            "                if ({a}[{j}] == 4 && {a}[{j} + 1] != 5) {{"
        ));
        if rng.random_bool(0.5) {
            l.push(format!("                    int {tmp} = {a}[{j} + 1];"));
            l.push(format!("                    {a}[{j} + 1] = 5;"));
            l.push(format!("                    {a}[{i}] = {tmp};"));
        } else {
            l.push(format!("                    {a}[{i}] = {a}[{j} + 1];"));
            l.push(format!("                    {a}[{j} + 1] = 5;"));
        }
        l.push("                    break;".into());
        l.push("                }".into());
        l.push("            }".into());
        l.push("        }".into());
        l.push("    }".into());
    } else {
        let pos = pick(rng, POS_NAMES);
        l.push(format!("    int {pos} = 0;"));
        l.push(format!(
            "    for (int {i} = 0; {i} {bound_op} {a}.length; {i}++) {{"
        ));
        l.push(format!("        if ({a}[{i}] == 4) {{"));
        l.push(format!(
            "            while ({a}[{pos}] != 5 || ({pos} > 0 && {a}[{pos} - 1] == 4)) {{"
        ));
        l.push(format!("                {pos}++;"));
        l.push("            }".into());
        if let Some(c) = &counter {
            l.push(format!("            {c} += 1;"));
        }
        l.push(format!("            {a}[{pos}] = {a}[{i} + 1];"));
        l.push(format!("            {a}[{i} + 1] = 5;"));
        l.push("        }".into());
        l.push("    }".into());
    }
    if rng.random_bool(0.2) {
        l.push(format!("    System.out.println({a}.length);"));
    }
    l.push(format!("    return {a};"));
    l.push("}".into());
    l.join("\n")
}

fn repeat_end<R: Rng>(rng: &mut R, bug: Option<PlantedPattern>) -> String {
    let s = pick(rng, STR_NAMES);
    let n = pick(rng, N_NAMES);
    let end = pick(rng, END_NAMES);
    let res = pick(rng, RES_NAMES);
    let i = pick(rng, INDEX_NAMES);
    let start = if bug == Some(PlantedPattern::SubstringOffByOne) {
        format!("{s}.length() - {n} - 1")
    } else {
        format!("{s}.length() - {n}")
    };
    let mut l = vec![format!("public String repeatEnd(String {s}, int {n}) {{")];
    let guard = bug == Some(PlantedPattern::StringIdentity) || rng.random_bool(0.4);
    if guard {
        let cond = if bug == Some(PlantedPattern::StringIdentity) {
            format!("{s} == \"\"")
        } else if rng.random_bool(0.5) {
            format!("{s}.equals(\"\")")
        } else {
            format!("{s}.length() == 0")
        };
        l.push(format!("    if ({cond}) {{"));
        l.push(format!("        return {s};"));
        l.push("    }".into());
    }
    let counter = neutral_prefix(rng, "    ", &mut l);
    if rng.random_bool(0.5) {
        l.push(format!("    String {end} = {s}.substring({start});"));
        l.push(format!("    String {res} = \"\";"));
        l.push(format!("    for (int {i} = 0; {i} < {n}; {i}++) {{"));
        if rng.random_bool(0.5) {
            l.push(format!("        {res} = {res} + {end};"));
        } else {
            l.push(format!("        {res} += {end};"));
        }
        if let Some(c) = &counter {
            l.push(format!("        {c}++;"));
        }
        l.push("    }".into());
    } else {
        l.push(format!("    String {res} = \"\";"));
        l.push(format!("    int {i} = 0;"));
        l.push(format!("    while ({i} < {n}) {{"));
        l.push(format!("        {res} += {s}.substring({start});"));
        l.push(format!("        {i}++;"));
        l.push("    }".into());
    }
    l.push(format!("    return {res};"));
    l.push("}".into());
    l.join("\n")
}

/// Java source for one submission of `problem_id`, planting `bug` if given.
pub fn program<R: Rng>(rng: &mut R, problem_id: &str, bug: Option<PlantedPattern>) -> String {
    match problem_id {
        FIX45 => fix45(rng, bug),
        _ => repeat_end(rng, bug),
    }
}

pub fn generate(config: &SynthConfig) -> SynthCorpus {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let base: DateTime<Utc> = Utc.with_ymd_and_hms(2019, 2, 1, 9, 0, 0).unwrap();
    let mut submissions = Vec::new();
    let mut planted = BTreeMap::new();
    let mut next_id = 10_000usize;
    for (pi, problem) in [FIX45, REPEAT_END].into_iter().enumerate() {
        let bugs: Vec<PlantedPattern> = PlantedPattern::ALL
            .into_iter()
            .filter(|p| p.problem() == problem)
            .collect();
        let mut made = 0;
        let mut student = 0;
        while made < config.per_problem {
            let attempts = rng
                .random_range(1..=config.max_attempts.max(1))
                .min(config.per_problem - made);
            let student_id = format!("s{:03}", student + pi * 7);
            let mut t = base
                + Duration::days(pi as i64 * 14)
                + Duration::minutes(rng.random_range(0..10_000));
            for _ in 0..attempts {
                let bug = rng
                    .random_bool(config.incorrect_rate)
                    .then(|| *bugs.choose(&mut rng).expect("two bugs per problem"));
                t += Duration::milliseconds(rng.random_range(30_000..900_000));
                let id = format!("{next_id}");
                next_id += 1;
                submissions.push(Submission {
                    submission_id: id.clone(),
                    student_id: student_id.clone(),
                    problem_id: problem.into(),
                    timestamp: t,
                    code: program(&mut rng, problem, bug),
                    is_correct: bug.is_none(),
                });
                planted.insert(id, bug);
                made += 1;
            }
            student += 1;
        }
    }
    let corpus = Corpus::new(problems(), submissions).expect("generated corpus is consistent");
    SynthCorpus { corpus, planted }
}

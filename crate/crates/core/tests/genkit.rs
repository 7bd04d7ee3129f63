//! Prompt construction, response parsing and the coverage pre-screen.

use std::collections::BTreeMap;

use chrono::{TimeZone, Utc};
use kc_core::corpus::{Problem, Submission};
use kc_core::genkit::{
    build_enrichment_prompt, build_worked_example_prompt, kc_coverage_heuristic,
    parse_enrichment_response, parse_worked_example, render, substitute, CoverageTarget,
    ExampleVariant, GenkitError, KcLabel, PromptVariant, Step, Templates, WorkedExample,
    KC_SECTION_MARKER,
};
use proptest::prelude::*;

mod common;

use common::coverage::{cases, score};

const STATEMENT: &str = "Return an array that contains exactly the same numbers as the given array, but rearranged so that every 4 is immediately followed by a 5. Do not move the 4's, but every other number may move. The array contains the same number of 4's and 5's, and every 4 has a number after it that is not a 4.";

const STUDENT: &str = "public int[] fix45(int[] list) {
    for (int x = 0; x < list.length; x++) {
        if (x == 0 && list[x] == 5 || list[x] == 5 && list[x - 1] != 4) {
            for (int z = 0; z < list.length - 1; z++) {
                if (list[z] == 4 && list[z + 1] != 5) {
                    list[x] = list[z + 1];
                    list[z + 1] = 5;
                    break;
                }
            }
        }
    }
    return list;
}";

const MIXED: &str = "x == 0 && list[x] == 5 || list[x] == 5 && list[x - 1] != 4";

/// Four-step answer around the grouped-condition counter, unfenced.
const GROUPED_EXAMPLE: &str = "QUESTION: Given an int array, count the negative values plus every zero that does not directly follow another zero.
OVERVIEW: Visit each element once. The test mixes && with ||, so parentheses make the operator precedence explicit instead of leaving it to the language.
STEP 1: Start the method with a counter set to zero.
public int countSpecial(int[] nums) {
    int count = 0;
STEP 2: Walk every index of the array.
    for (int i = 0; i < nums.length; i++) {
STEP 3: Group the two alternatives with parentheses so each boolean operator binds where intended.
        if (nums[i] < 0 || (nums[i] == 0 && (i == 0 || nums[i - 1] != 0))) {
            count++;
        }
STEP 4: Close the loop and hand back the count.
    }
    return count;
}
";

fn problem() -> Problem {
    Problem {
        problem_id: "fix45".into(),
        title: "fix45".into(),
        statement: STATEMENT.into(),
    }
}

fn submission() -> Submission {
    Submission {
        submission_id: "10003".into(),
        student_id: "s000".into(),
        problem_id: "fix45".into(),
        timestamp: Utc.timestamp_millis_opt(1_549_058_493_433).unwrap(),
        code: STUDENT.into(),
        is_correct: false,
    }
}

fn label(id: usize, name: &str, desc: &str) -> KcLabel {
    KcLabel::new(id, name, desc).unwrap()
}

fn two_targets() -> Vec<KcLabel> {
    vec![
        label(
            3,
            "Boolean operator precedence",
            "Mixing && and || without grouping changes the meaning.",
        ),
        label(
            8,
            "Array loop bound check",
            "The loop index must stay below the array length.",
        ),
    ]
}

#[test]
fn enrichment_prompt_carries_inputs_verbatim() {
    let t = Templates::default();
    let b = build_enrichment_prompt(&t, &problem(), &submission(), MIXED, 7).unwrap();
    assert_eq!(b.variant, PromptVariant::Enrichment);
    assert!(b.user_text.contains(STATEMENT));
    assert!(b.user_text.contains(STUDENT));
    assert!(b.user_text.contains(MIXED));
    assert!(!b.user_text.contains("{{") && !b.system_text.contains("{{"));
    assert_eq!(
        b,
        build_enrichment_prompt(&t, &problem(), &submission(), MIXED, 7).unwrap()
    );
    assert_eq!(
        build_enrichment_prompt(&t, &problem(), &submission(), "  \n", 7),
        Err(GenkitError::EmptySnippet)
    );
}

#[test]
fn enrichment_label_length() {
    let ok = parse_enrichment_response(
        "LABEL: Boolean operator precedence\nDESC: Mixing && and || without parentheses groups terms unexpectedly.",
        4,
    )
    .unwrap();
    assert_eq!(ok.kc_id, 4);
    assert_eq!(ok.label, "Boolean operator precedence");

    let with = |l: &str| parse_enrichment_response(&format!("LABEL: {l}\nDESC: One sentence."), 0);
    assert!(with("Precedence").is_err());
    assert!(with("one two three four five six seven").is_err());
    assert!(with("one two three four five six").is_ok());
    assert!(parse_enrichment_response("LABEL: Loop bounds", 0).is_err());
}

#[test]
fn baseline_and_conditioned_differ_only_in_kc_section() {
    let t = Templates::default();
    let targets = two_targets();
    let base =
        build_worked_example_prompt(&t, &problem(), &submission(), ExampleVariant::Baseline, &[])
            .unwrap();
    let cond = build_worked_example_prompt(
        &t,
        &problem(),
        &submission(),
        ExampleVariant::KcConditioned,
        &targets,
    )
    .unwrap();
    assert_eq!(base.variant, PromptVariant::Baseline);
    assert_eq!(cond.variant, PromptVariant::KcConditioned);
    assert!(!base.user_text.contains(KC_SECTION_MARKER));
    assert!(cond.user_text.contains(KC_SECTION_MARKER));
    for k in &targets {
        assert!(cond
            .user_text
            .contains(&format!("- {}: {}", k.label, k.description)));
    }
    for b in [&base, &cond] {
        assert!(b.user_text.contains(STATEMENT));
        assert!(b.user_text.contains(STUDENT));
    }
    assert_eq!(base.system_text, cond.system_text);

    let list = targets
        .iter()
        .map(|k| format!("- {}: {}", k.label, k.description))
        .collect::<Vec<_>>()
        .join("\n");
    let section = substitute(
        &t.kc_section,
        &BTreeMap::from([("kc_list".to_string(), list)]),
    )
    .unwrap();
    // the bundles differ by exactly one inserted block equal to the section
    let at = cond.user_text.find(&section).expect("section present");
    let mut removed = cond.user_text.clone();
    removed.replace_range(at..at + section.len(), "");
    assert_eq!(removed, base.user_text);
}

#[test]
fn variant_and_targets_must_agree() {
    let t = Templates::default();
    assert_eq!(
        build_worked_example_prompt(
            &t,
            &problem(),
            &submission(),
            ExampleVariant::Baseline,
            &two_targets()
        ),
        Err(GenkitError::BaselineWithTargets)
    );
    assert_eq!(
        build_worked_example_prompt(
            &t,
            &problem(),
            &submission(),
            ExampleVariant::KcConditioned,
            &[]
        ),
        Err(GenkitError::ConditionedWithoutTargets)
    );
}

#[test]
fn unknown_placeholder_in_custom_template() {
    let t = Templates {
        worked_example_user: "{{problem_statement}} {{nope}}".into(),
        ..Templates::default()
    };
    assert_eq!(
        build_worked_example_prompt(&t, &problem(), &submission(), ExampleVariant::Baseline, &[]),
        Err(GenkitError::UnresolvedPlaceholder("nope".into()))
    );
}

#[test]
fn templates_round_trip_through_a_directory() {
    let dir = tempfile::tempdir().unwrap();
    let mut t = Templates::default();
    t.format_reminder = "\nFix it: {{error}}\n".into();
    t.write_dir(dir.path()).unwrap();
    assert_eq!(Templates::load_dir(dir.path()).unwrap(), t);

    std::fs::write(dir.path().join("kc_section.txt"), "{{kc_list}}").unwrap();
    assert!(matches!(
        Templates::load_dir(dir.path()),
        Err(GenkitError::Template { .. })
    ));
}

fn fenced(n: usize) -> String {
    let mut s = "QUESTION: Sum an array.\nOVERVIEW: Add the values one at a time.\n".to_string();
    for i in 1..=n {
        s.push_str(&format!(
            "STEP {i}: Part {i}.\n```java\nint v{i} = {i};\n```\n"
        ));
    }
    s
}

#[test]
fn step_count_bounds() {
    for n in [3, 10] {
        let ex = parse_worked_example(&fenced(n), ExampleVariant::Baseline, &[]).unwrap();
        assert_eq!(ex.steps.len(), n);
    }
    for n in [2, 11] {
        let err = parse_worked_example(&fenced(n), ExampleVariant::Baseline, &[]).unwrap_err();
        assert_eq!(
            err,
            GenkitError::Format(format!("{n} steps, expected 3 to 10"))
        );
    }
}

#[test]
fn prose_only_step_is_named() {
    let text = "QUESTION: q\nOVERVIEW: o\nSTEP 1: a\n```java\nint a = 1;\n```\nSTEP 2: b\n```java\nint b = 2;\n```\nSTEP 3: just words here\n";
    let err = parse_worked_example(text, ExampleVariant::Baseline, &[]).unwrap_err();
    assert!(err.to_string().contains("step 3"), "{err}");
}

#[test]
fn grouped_condition_example_parses() {
    let targets = vec![two_targets().remove(0)];
    let ex =
        parse_worked_example(GROUPED_EXAMPLE, ExampleVariant::KcConditioned, &targets).unwrap();
    assert_eq!(ex.steps.len(), 4);
    assert!(ex.steps[0].code.starts_with("public int countSpecial"));
    assert!(ex.steps[2]
        .code
        .contains("(nums[i] == 0 && (i == 0 || nums[i - 1] != 0))"));
    assert_eq!(ex.kc_targets, targets);
    let reparsed =
        parse_worked_example(&render(&ex), ExampleVariant::KcConditioned, &targets).unwrap();
    assert_eq!(reparsed, ex);
}

fn words() -> impl Strategy<Value = String> {
    prop::collection::vec("[A-Za-z]{1,8}", 1..8).prop_map(|w| w.join(" "))
}

fn code() -> impl Strategy<Value = String> {
    prop::collection::vec("[a-z]{1,6} = [0-9]{1,3};", 1..4).prop_map(|l| l.join("\n    "))
}

proptest! {
    #[test]
    fn render_then_parse_is_identity(
        question in words(),
        overview in words(),
        steps in prop::collection::vec((words(), code()), 3..=10),
    ) {
        let ex = WorkedExample {
            question,
            overview,
            steps: steps.into_iter().map(|(explanation, code)| Step { explanation, code }).collect(),
            variant: ExampleVariant::Baseline,
            kc_targets: vec![],
        };
        prop_assert_eq!(parse_worked_example(&render(&ex), ExampleVariant::Baseline, &[]).unwrap(), ex);
    }
}

#[test]
fn coverage_agrees_with_hand_labels() {
    let cases = cases();
    assert_eq!(cases.len(), 20);
    let mut agree = 0;
    let mut misses = Vec::new();
    for (i, c) in cases.iter().enumerate() {
        let got = score(c, i);
        if (got.in_code, got.in_text) == c.hand {
            agree += 1;
        } else {
            misses.push(format!("{}: got {got:?}, hand {:?}", c.label, c.hand));
        }
    }
    assert!(agree >= 18, "{agree}/20 agree; {misses:#?}");

    let grouped = score(&cases[0], 0);
    assert!(grouped.in_code && grouped.in_text);
    let absent = score(&cases[4], 4);
    assert!(!absent.in_code && !absent.in_text);
}

#[test]
fn coverage_requires_targets() {
    let ex = parse_worked_example(&fenced(3), ExampleVariant::Baseline, &[]).unwrap();
    assert_eq!(
        kc_coverage_heuristic(&ex, &[]),
        Err(GenkitError::ConditionedWithoutTargets)
    );
    let unpatterned = CoverageTarget {
        label: label(0, "Sum accumulation", "Adds values."),
        pattern: None,
    };
    assert!(!kc_coverage_heuristic(&ex, &[unpatterned]).unwrap()[0].in_code);
}

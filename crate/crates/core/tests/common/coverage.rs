//! Hand-labelled coverage cases shared by the genkit tests and the
//! acceptance target.

use kc_core::ast::{normalized_subtrees, Language};
use kc_core::genkit::{
    kc_coverage_heuristic, CoverageResult, CoverageTarget, ExampleVariant, KcLabel, PatternRef,
    Step, WorkedExample,
};

/// Pattern of the first `kind` subtree of `stmt`, placed in a method body.
pub fn pattern_of(stmt: &str, kind: &str) -> PatternRef {
    let src = format!("void f() {{ {stmt} }}");
    let s = normalized_subtrees(&src, Language::Java, 1, usize::MAX)
        .unwrap()
        .into_iter()
        .find(|s| s.kind == kind)
        .unwrap_or_else(|| panic!("no {kind} in {stmt}"));
    PatternRef {
        kind: s.kind,
        tokens: s.tokens,
    }
}

pub struct Case {
    pub label: &'static str,
    pub stmt: &'static str,
    pub kind: &'static str,
    pub overview: &'static str,
    pub steps: [(&'static str, &'static str); 3],
    /// Hand judgement: (code shows the construct, text names it).
    pub hand: (bool, bool),
}

pub fn cases() -> Vec<Case> {
    vec![
        Case {
            label: "Boolean operator precedence",
            stmt: "if (x == 0 && a[x] == 5 || a[x] == 5 && a[x - 1] != 4) c++;",
            kind: "binary_expression",
            overview: "Parentheses fix the operator precedence of the combined test.",
            steps: [
                ("Declare a counter.", "public int countSpecial(int[] nums) {\n    int count = 0;"),
                ("Walk the array.", "    for (int i = 0; i < nums.length; i++) {"),
                (
                    "Group the two alternatives so each boolean operator binds as intended.",
                    "        if (nums[i] < 0 || (nums[i] == 0 && (i == 0 || nums[i - 1] != 0))) count++;\n    }\n    return count;\n}",
                ),
            ],
            hand: (true, true),
        },
        Case {
            label: "Array loop bound check",
            stmt: "for (int i = 0; i <= nums.length; i++) s += nums[i];",
            kind: "binary_expression",
            overview: "Add every value.",
            steps: [
                ("Start a total.", "public int total(int[] vals) {\n    int t = 0;"),
                (
                    "Loop over the array and check the index stays inside the bound.",
                    "    for (int i = 0; i < vals.length; i++) {\n        t += vals[i];\n    }",
                ),
                ("Return it.", "    return t;\n}"),
            ],
            hand: (true, true),
        },
        Case {
            label: "String equality comparison",
            stmt: "if (str == \"\") n++;",
            kind: "binary_expression",
            overview: "Count matching words.",
            steps: [
                ("Start counting.", "public int matches(String[] words, String target) {\n    int n = 0;"),
                (
                    "Test string equality with equals rather than the identity operator.",
                    "    for (String w : words) {\n        if (w.equals(target)) n++;\n    }",
                ),
                ("Report the tally.", "    return n;\n}"),
            ],
            hand: (true, true),
        },
        Case {
            label: "Substring end index arithmetic",
            stmt: "int end = text.length() - 1;",
            kind: "binary_expression",
            overview: "Drop the last character.",
            steps: [
                ("Declare the method.", "public String trimLast(String s) {"),
                ("Guard the empty input.", "    if (s.isEmpty()) return s;"),
                (
                    "Take the substring whose end index is one less than the length.",
                    "    return s.substring(0, s.length() - 1);\n}",
                ),
            ],
            hand: (true, true),
        },
        Case {
            label: "Recursive base case",
            stmt: "if (n == 0) return 1;",
            kind: "if_statement",
            overview: "Add up the elements.",
            steps: [
                ("Start a running sum.", "public int sum(int[] v) {\n    int s = 0;"),
                ("Visit each element.", "    for (int x : v) {\n        s += x;\n    }"),
                ("Return the sum.", "    return s;\n}"),
            ],
            hand: (false, false),
        },
        Case {
            label: "Integer division truncation",
            stmt: "int half = a / b;",
            kind: "binary_expression",
            overview: "Integer division truncation would lose the fraction, so this solution counts instead.",
            steps: [
                ("Start a tally.", "public int evens(int[] v) {\n    int c = 0;"),
                ("Count the even entries.", "    for (int x : v) {\n        if (x % 2 == 0) c++;\n    }"),
                ("Return the tally.", "    return c;\n}"),
            ],
            hand: (false, true),
        },
        Case {
            label: "Compound assignment accumulation",
            stmt: "total += values[j];",
            kind: "assignment_expression",
            overview: "Produce a total.",
            steps: [
                ("Start at zero.", "public int total(int[] nums) {\n    int sum = 0;"),
                (
                    "Add each element to the running sum.",
                    "    for (int i = 0; i < nums.length; i++) {\n        sum += nums[i];\n    }",
                ),
                ("Hand it back.", "    return sum;\n}"),
            ],
            hand: (true, false),
        },
        Case {
            label: "Null reference guard",
            stmt: "if (s == null) return 0;",
            kind: "binary_expression",
            overview: "Measure a name safely.",
            steps: [
                ("Declare the method.", "public int size(String name) {"),
                ("Guard against a null reference first.", "    if (name == null) return 0;"),
                ("Return the length.", "    return name.length();\n}"),
            ],
            hand: (true, true),
        },
        Case {
            label: "Modulo parity test",
            stmt: "if (n % 2 == 0) c++;",
            kind: "binary_expression",
            overview: "Count even entries.",
            steps: [
                ("Start a counter.", "public int evens(int[] nums) {\n    int c = 0;"),
                (
                    "Use modulo to test the parity of each entry.",
                    "    for (int i = 0; i < nums.length; i++) {\n        if (nums[i] % 2 == 0) c++;\n    }",
                ),
                ("Return the counter.", "    return c;\n}"),
            ],
            hand: (true, true),
        },
        Case {
            label: "String concatenation in loop",
            stmt: "result = result + word;",
            kind: "assignment_expression",
            overview: "Find the largest value.",
            steps: [
                ("Take the first entry as the best so far.", "public int max(int[] nums) {\n    int best = nums[0];"),
                (
                    "Visit each element and keep the largest.",
                    "    for (int i = 1; i < nums.length; i++) {\n        if (nums[i] > best) best = nums[i];\n    }",
                ),
                ("Return the best.", "    return best;\n}"),
            ],
            hand: (false, false),
        },
        Case {
            label: "Early return from loop",
            stmt: "if (a[i] == t) return i;",
            kind: "if_statement",
            overview: "Search for a target.",
            steps: [
                ("Declare the method.", "public boolean has(int[] nums, int target) {"),
                (
                    "Return early as soon as the loop finds a match.",
                    "    for (int i = 0; i < nums.length; i++) {\n        if (nums[i] == target) return true;\n    }",
                ),
                ("Nothing matched.", "    return false;\n}"),
            ],
            hand: (true, true),
        },
        Case {
            label: "Neighbor index access",
            stmt: "if (a[i] == a[i + 1]) c++;",
            kind: "binary_expression",
            overview: "Count repeated adjacent pairs.",
            steps: [
                ("Start counting.", "public int pairs(int[] nums) {\n    int c = 0;"),
                (
                    "Compare each value with its neighbor at the next index.",
                    "    for (int i = 0; i < nums.length - 1; i++) {\n        if (nums[i] == nums[i + 1]) c++;\n    }",
                ),
                ("Return the count.", "    return c;\n}"),
            ],
            hand: (true, true),
        },
        Case {
            label: "Character literal comparison",
            stmt: "if (c == 'a') n++;",
            kind: "binary_expression",
            overview: "Count occurrences of x.",
            steps: [
                ("Start counting.", "public int xs(String s) {\n    int n = 0;"),
                (
                    "Check each character against the literal 'x'.",
                    "    for (int i = 0; i < s.length(); i++) {\n        if (s.charAt(i) == 'x') n++;\n    }",
                ),
                ("Return the count.", "    return n;\n}"),
            ],
            hand: (true, true),
        },
        Case {
            label: "Boolean flag variable",
            stmt: "boolean found = false;",
            kind: "local_variable_declaration",
            overview: "Detect a negative entry.",
            steps: [
                ("Keep a boolean flag variable that records a hit.", "public boolean anyNegative(int[] v) {\n    boolean seen = false;"),
                ("Scan the entries.", "    for (int x : v) {\n        if (x < 0) seen = true;\n    }"),
                ("Return the flag.", "    return seen;\n}"),
            ],
            hand: (true, true),
        },
        Case {
            label: "While loop termination",
            stmt: "while (i < n) { i++; }",
            kind: "while_statement",
            overview: "Sum the entries.",
            steps: [
                ("Start a total.", "public int sum(int[] v) {\n    int s = 0;"),
                ("Step through the array with a for statement.", "    for (int i = 0; i < v.length; i++) {\n        s += v[i];\n    }"),
                ("Return the total.", "    return s;\n}"),
            ],
            hand: (false, false),
        },
        Case {
            label: "Conditional ternary expression",
            stmt: "int m = x > y ? x : y;",
            kind: "ternary_expression",
            overview: "Find the maximum.",
            steps: [
                ("Take the first entry.", "public int max(int[] nums) {\n    int best = nums[0];"),
                (
                    "Use a conditional ternary expression to keep the larger value.",
                    "    for (int i = 1; i < nums.length; i++) {\n        best = nums[i] > best ? nums[i] : best;\n    }",
                ),
                ("Return it.", "    return best;\n}"),
            ],
            hand: (true, true),
        },
        Case {
            label: "Nested loop iteration",
            stmt: "for (int j = i + 1; j < n; j++) c++;",
            kind: "for_header",
            overview: "Count equal pairs.",
            steps: [
                ("Start counting.", "public int equalPairs(int[] nums) {\n    int c = 0;"),
                (
                    "Use a nested loop so the iteration covers every pair once.",
                    "    for (int i = 0; i < nums.length; i++) {\n        for (int j = i + 1; j < nums.length; j++) {\n            if (nums[i] == nums[j]) c++;\n        }\n    }",
                ),
                ("Return the count.", "    return c;\n}"),
            ],
            hand: (true, true),
        },
        Case {
            label: "Integer parsing from string",
            stmt: "int v = Integer.parseInt(s);",
            kind: "local_variable_declaration",
            overview: "Add up the values.",
            steps: [
                ("Start at zero.", "public int sum(int[] v) {\n    int s = 0;"),
                ("Add each value.", "    for (int x : v) {\n        s += x;\n    }"),
                ("Return the total.", "    return s;\n}"),
            ],
            hand: (false, false),
        },
        Case {
            label: "Array element swap",
            stmt: "int tmp = a[i];",
            kind: "local_variable_declaration",
            overview: "Reverse in place.",
            steps: [
                ("Declare the method.", "public void reverse(int[] a) {"),
                (
                    "Swap each array element with its mirror.",
                    "    for (int i = 0; i < a.length / 2; i++) {\n        int tmp = a[i];\n        a[i] = a[a.length - 1 - i];\n        a[a.length - 1 - i] = tmp;\n    }",
                ),
                ("Done.", "}"),
            ],
            hand: (true, true),
        },
        Case {
            label: "Decrementing loop counter",
            stmt: "i--;",
            kind: "update_expression",
            overview: "Show the values backwards.",
            steps: [
                ("Declare the method.", "public void show(int[] v) {"),
                ("Print each value.", "    for (int i = v.length - 1; i >= 0; i--) {\n        System.out.println(v[i]);\n    }"),
                ("Done.", "}"),
            ],
            hand: (true, false),
        },
    ]
}

pub fn score(case: &Case, id: usize) -> CoverageResult {
    let target = CoverageTarget {
        label: KcLabel::new(id, case.label, "Hand-labelled target.").unwrap(),
        pattern: Some(pattern_of(case.stmt, case.kind)),
    };
    let ex = WorkedExample {
        question: "Write the method.".into(),
        overview: case.overview.into(),
        steps: case
            .steps
            .iter()
            .map(|(e, c)| Step {
                explanation: (*e).into(),
                code: (*c).into(),
            })
            .collect(),
        variant: ExampleVariant::KcConditioned,
        kc_targets: vec![target.label.clone()],
    };
    let got = kc_coverage_heuristic(&ex, &[target]).unwrap();
    assert_eq!(got.len(), 1);
    got[0]
}

//! Offline completer returning canned, well-formed responses.

use crate::genkit::{ChatRequest, Completer, LlmError, KC_SECTION_MARKER};

/// Answers enrichment prompts with a fixed label and worked-example
/// prompts with a three-step example whose overview names any KC labels
/// found in the prompt.
#[derive(Debug, Clone, Copy, Default)]
pub struct StubCompleter;

fn kc_labels(user: &str) -> Vec<String> {
    let Some(start) = user.find(KC_SECTION_MARKER) else {
        return Vec::new();
    };
    user[start..]
        .lines()
        .skip(1)
        .skip_while(|l| !l.starts_with("- "))
        .take_while(|l| l.starts_with("- "))
        .filter_map(|l| l[2..].split(':').next().map(|s| s.trim().to_string()))
        .collect()
}

const STUB_EXAMPLE: &str = "\
QUESTION: Write a method countEvens(int[] nums) that returns how many values in nums are even.

OVERVIEW: Walk the array once with an index loop and keep a running count.{labels}

STEP 1: Start a counter at zero.
```java
int count = 0;
```

STEP 2: Visit every index from 0 up to, but not including, the array length, and count the even values.
```java
for (int i = 0; i < nums.length; i++) {
    if (nums[i] % 2 == 0) {
        count++;
    }
}
```

STEP 3: Return the count once the loop ends.
```java
return count;
```
";

impl Completer for StubCompleter {
    fn complete(&self, request: &ChatRequest) -> Result<String, LlmError> {
        let user = request
            .messages
            .iter()
            .rev()
            .find(|m| m.role == "user")
            .map(|m| m.content.as_str())
            .unwrap_or_default();
        if user.contains("LABEL:") {
            return Ok("LABEL: Recurring code pattern\nDESC: A construct that recurs across student submissions.\n".into());
        }
        let labels = kc_labels(user);
        let note = if labels.is_empty() {
            String::new()
        } else {
            format!(" The example practices {}.", labels.join(", "))
        };
        Ok(STUB_EXAMPLE.replace("{labels}", &note))
    }
}

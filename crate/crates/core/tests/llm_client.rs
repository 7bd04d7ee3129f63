//! HTTP completion client against a local stub server, plus replay and the
//! format-reminder retry.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;

use chrono::{TimeZone, Utc};
use kc_core::corpus::{Problem, Submission};
use kc_core::genkit::{
    build_worked_example_prompt, complete_and_parse, parse_worked_example, request_hash,
    ChatRequest, Completer, ExampleVariant, FnCompleter, HttpCompleter, LlmConfig, LlmError,
    ReplayCompleter, Templates, TranscriptStore,
};

const CANNED: &str = "QUESTION: Count the even values in an array.
OVERVIEW: Walk the array once and test each value.
STEP 1: Declare the method and a counter.
```java
public int countEvens(int[] nums) {
    int count = 0;
```
STEP 2: Visit every index.
```java
    for (int i = 0; i < nums.length; i++) {
```
STEP 3: Test parity, then return the total.
```java
        if (nums[i] % 2 == 0) count++;
    }
    return count;
}
```
";

struct Reply {
    status: u16,
    body: String,
}

/// Serves one scripted reply per request, repeating the last one, and
/// records each request body.
struct StubServer {
    url: String,
    hits: Arc<AtomicUsize>,
    bodies: Arc<Mutex<Vec<String>>>,
}

fn read_request(stream: &mut TcpStream) -> Option<String> {
    let mut reader = BufReader::new(stream.try_clone().ok()?);
    let mut len = 0usize;
    loop {
        let mut line = String::new();
        if reader.read_line(&mut line).ok()? == 0 {
            return None;
        }
        let l = line.trim_end();
        if l.is_empty() {
            break;
        }
        if let Some((k, v)) = l.split_once(':') {
            if k.eq_ignore_ascii_case("content-length") {
                len = v.trim().parse().ok()?;
            }
        }
    }
    let mut body = vec![0u8; len];
    reader.read_exact(&mut body).ok()?;
    String::from_utf8(body).ok()
}

fn serve(script: Vec<Reply>) -> StubServer {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!(
        "http://{}/v1/chat/completions",
        listener.local_addr().unwrap()
    );
    let hits = Arc::new(AtomicUsize::new(0));
    let bodies = Arc::new(Mutex::new(Vec::new()));
    let (h, b) = (hits.clone(), bodies.clone());
    thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { continue };
            let Some(body) = read_request(&mut stream) else {
                continue;
            };
            let n = h.fetch_add(1, Ordering::SeqCst);
            b.lock().unwrap().push(body);
            let reply = &script[n.min(script.len() - 1)];
            let resp = format!(
                "HTTP/1.1 {} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{}",
                reply.status,
                reply.body.len(),
                reply.body
            );
            let _ = stream.write_all(resp.as_bytes());
        }
    });
    StubServer { url, hits, bodies }
}

fn ok_body(content: &str) -> String {
    serde_json::json!({"choices": [{"message": {"role": "assistant", "content": content}}]})
        .to_string()
}

fn config(url: &str) -> LlmConfig {
    LlmConfig {
        endpoint: url.to_string(),
        model: "stub-model".into(),
        timeout_secs: 5,
        max_retries: 3,
        backoff_ms: 1,
        ..Default::default()
    }
}

fn request() -> ChatRequest {
    let templates = Templates::default();
    let problem = Problem {
        problem_id: "p".into(),
        title: "t".into(),
        statement: "Count values.".into(),
    };
    let sub = Submission {
        submission_id: "1".into(),
        student_id: "s".into(),
        problem_id: "p".into(),
        timestamp: Utc.timestamp_millis_opt(0).unwrap(),
        code: "int x = 0;".into(),
        is_correct: false,
    };
    let b = build_worked_example_prompt(&templates, &problem, &sub, ExampleVariant::Baseline, &[])
        .unwrap();
    ChatRequest::new("stub-model", &b)
}

#[test]
fn canned_reply_returned_verbatim() {
    let srv = serve(vec![Reply {
        status: 200,
        body: ok_body(CANNED),
    }]);
    let c = HttpCompleter::with_key(config(&srv.url), "k".into());
    assert_eq!(c.complete(&request()).unwrap(), CANNED);
    assert_eq!(srv.hits.load(Ordering::SeqCst), 1);

    // two messages, the model name, and no sampling parameters
    let sent: serde_json::Value = serde_json::from_str(&srv.bodies.lock().unwrap()[0]).unwrap();
    let keys: Vec<&String> = sent.as_object().unwrap().keys().collect();
    assert_eq!(keys, ["messages", "model"]);
    assert_eq!(sent["messages"][0]["role"], "system");
    assert_eq!(sent["messages"][1]["role"], "user");
}

#[test]
fn transient_failures_are_retried() {
    let srv = serve(vec![
        Reply {
            status: 503,
            body: "busy".into(),
        },
        Reply {
            status: 503,
            body: "busy".into(),
        },
        Reply {
            status: 200,
            body: ok_body("done"),
        },
    ]);
    let c = HttpCompleter::with_key(config(&srv.url), "k".into());
    assert_eq!(c.complete(&request()).unwrap(), "done");
    assert_eq!(srv.hits.load(Ordering::SeqCst), 3);
}

#[test]
fn retries_exhausted() {
    let srv = serve(vec![Reply {
        status: 500,
        body: "down".into(),
    }]);
    let mut cfg = config(&srv.url);
    cfg.max_retries = 2;
    let err = HttpCompleter::with_key(cfg, "k".into())
        .complete(&request())
        .unwrap_err();
    assert!(
        matches!(err, LlmError::RetriesExhausted { attempts: 3, .. }),
        "{err}"
    );
    assert!(err.is_upstream());
    assert_eq!(srv.hits.load(Ordering::SeqCst), 3);
}

#[test]
fn unauthorized_is_configuration_error_without_retry() {
    let srv = serve(vec![Reply {
        status: 401,
        body: "no".into(),
    }]);
    let err = HttpCompleter::with_key(config(&srv.url), "bad".into())
        .complete(&request())
        .unwrap_err();
    assert!(matches!(err, LlmError::Config(_)), "{err}");
    assert!(!err.is_upstream());
    assert_eq!(srv.hits.load(Ordering::SeqCst), 1);
}

#[test]
fn other_client_errors_carry_status() {
    let srv = serve(vec![Reply {
        status: 400,
        body: "bad request".into(),
    }]);
    let err = HttpCompleter::with_key(config(&srv.url), "k".into())
        .complete(&request())
        .unwrap_err();
    assert!(matches!(err, LlmError::Http { status: 400, .. }), "{err}");
    assert_eq!(srv.hits.load(Ordering::SeqCst), 1);
}

#[test]
fn missing_key_is_configuration_error() {
    let cfg = LlmConfig {
        api_key_env: "KC_TEST_KEY_THAT_IS_NEVER_SET".into(),
        ..Default::default()
    };
    assert!(matches!(HttpCompleter::new(cfg), Err(LlmError::Config(_))));
    let zero = LlmConfig {
        timeout_secs: 0,
        ..Default::default()
    };
    assert!(matches!(zero.validate(), Err(LlmError::Config(_))));
}

fn parse(text: &str) -> Result<kc_core::genkit::WorkedExample, kc_core::genkit::GenkitError> {
    parse_worked_example(text, ExampleVariant::Baseline, &[])
}

#[test]
fn malformed_reply_gets_one_reminder_retry() {
    let templates = Templates::default();
    let req = request();
    let bundle = build_worked_example_prompt(
        &templates,
        &Problem {
            problem_id: "p".into(),
            title: "t".into(),
            statement: "Count values.".into(),
        },
        &Submission {
            submission_id: "1".into(),
            student_id: "s".into(),
            problem_id: "p".into(),
            timestamp: Utc.timestamp_millis_opt(0).unwrap(),
            code: "int x = 0;".into(),
            is_correct: false,
        },
        ExampleVariant::Baseline,
        &[],
    )
    .unwrap();
    assert_eq!(ChatRequest::new("stub-model", &bundle), req);

    let calls = AtomicUsize::new(0);
    let flaky = FnCompleter(|r: &ChatRequest| {
        let n = calls.fetch_add(1, Ordering::SeqCst);
        if n == 0 {
            Ok("just some prose".to_string())
        } else {
            assert!(r.messages[1]
                .content
                .contains("did not follow the required format"));
            Ok(CANNED.to_string())
        }
    });
    let dir = tempfile::tempdir().unwrap();
    let store = TranscriptStore::new(dir.path()).unwrap();
    let (res, transcripts) = complete_and_parse(
        &flaky,
        &templates,
        "stub-model",
        &bundle,
        Some(&store),
        parse,
    );
    assert_eq!(res.unwrap().steps.len(), 3);
    assert_eq!(transcripts.len(), 2);
    assert_ne!(transcripts[0].parse_outcome, "ok");
    assert_eq!(transcripts[1].parse_outcome, "ok");
    for t in &transcripts {
        assert!(store.path_for(&t.request_hash).exists());
        assert_eq!(t.request_hash, request_hash(&t.request));
    }

    let always_bad = FnCompleter(|_: &ChatRequest| Ok("QUESTION: only".to_string()));
    let (res, transcripts) =
        complete_and_parse(&always_bad, &templates, "stub-model", &bundle, None, parse);
    assert!(matches!(res, Err(LlmError::Format(_))));
    assert_eq!(transcripts.len(), 2);
}

#[test]
fn replay_answers_from_transcripts() {
    let templates = Templates::default();
    let dir = tempfile::tempdir().unwrap();
    let store = TranscriptStore::new(dir.path()).unwrap();
    let bundle = {
        let req = request();
        kc_core::genkit::PromptBundle {
            system_text: req.messages[0].content.clone(),
            user_text: req.messages[1].content.clone(),
            variant: kc_core::genkit::PromptVariant::Baseline,
            substitutions: Default::default(),
        }
    };
    let live = FnCompleter(|_: &ChatRequest| Ok(CANNED.to_string()));
    let (first, _) = complete_and_parse(
        &live,
        &templates,
        "stub-model",
        &bundle,
        Some(&store),
        parse,
    );
    let replay = ReplayCompleter::new(store.clone());
    let (second, _) = complete_and_parse(&replay, &templates, "stub-model", &bundle, None, parse);
    assert_eq!(first.unwrap(), second.unwrap());

    let unknown = ChatRequest::new("other-model", &bundle);
    assert!(matches!(
        replay.complete(&unknown),
        Err(LlmError::Replay(_))
    ));
}

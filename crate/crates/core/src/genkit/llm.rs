//! Chat-completion client, transcripts and replay.

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::artifact::write_atomic;

use super::{with_format_reminder, GenkitError, PromptBundle, Templates};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct LlmConfig {
    pub endpoint: String,
    pub model: String,
    /// Name of the environment variable holding the API key.
    pub api_key_env: String,
    pub timeout_secs: u64,
    pub max_retries: u32,
    pub parallelism: usize,
    /// First retry delay; doubles on each further retry.
    pub backoff_ms: u64,
}

impl Default for LlmConfig {
    fn default() -> Self {
        Self {
            endpoint: "https://api.openai.com/v1/chat/completions".into(),
            model: "gpt-5.2".into(),
            api_key_env: "OPENAI_API_KEY".into(),
            timeout_secs: 120,
            max_retries: 3,
            parallelism: 4,
            backoff_ms: 500,
        }
    }
}

impl LlmConfig {
    pub fn validate(&self) -> Result<(), LlmError> {
        if self.timeout_secs == 0 {
            return Err(LlmError::Config("timeout must be positive".into()));
        }
        if self.parallelism == 0 {
            return Err(LlmError::Config("parallelism must be at least 1".into()));
        }
        if self.endpoint.is_empty() || self.model.is_empty() {
            return Err(LlmError::Config("endpoint and model are required".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("gave up after {attempts} attempts: {last}")]
    RetriesExhausted { attempts: u32, last: String },
    #[error("unexpected response body: {0}")]
    BadResponse(String),
    #[error("no recorded transcript for request {0}")]
    Replay(String),
    #[error("response rejected twice: {0}")]
    Format(GenkitError),
    #[error(transparent)]
    Prompt(#[from] GenkitError),
    #[error("transcript io: {0}")]
    Io(#[from] std::io::Error),
    #[error("transcript json: {0}")]
    Json(#[from] serde_json::Error),
}

impl LlmError {
    /// True for failures caused by the remote service rather than by local
    /// configuration or data.
    pub fn is_upstream(&self) -> bool {
        matches!(
            self,
            Self::Http { .. }
                | Self::RetriesExhausted { .. }
                | Self::BadResponse(_)
                | Self::Format(_)
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

/// Two-message request body. No sampling parameters are sent.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
}

impl ChatRequest {
    pub fn new(model: &str, bundle: &PromptBundle) -> Self {
        Self {
            model: model.to_string(),
            messages: vec![
                ChatMessage {
                    role: "system".into(),
                    content: bundle.system_text.clone(),
                },
                ChatMessage {
                    role: "user".into(),
                    content: bundle.user_text.clone(),
                },
            ],
        }
    }
}

/// Hex SHA-256 of the request's JSON encoding.
pub fn request_hash(request: &ChatRequest) -> String {
    hex::encode(Sha256::digest(
        serde_json::to_vec(request).expect("request serializes"),
    ))
}

pub trait Completer: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<String, LlmError>;
}

/// Completer backed by a closure, for stubs and tests.
pub struct FnCompleter<F>(pub F);

impl<F> Completer for FnCompleter<F>
where
    F: Fn(&ChatRequest) -> Result<String, LlmError> + Send + Sync,
{
    fn complete(&self, request: &ChatRequest) -> Result<String, LlmError> {
        (self.0)(request)
    }
}

pub struct HttpCompleter {
    config: LlmConfig,
    api_key: String,
    agent: ureq::Agent,
}

enum Attempt {
    Done(String),
    Transient(String),
    Fatal(LlmError),
}

impl HttpCompleter {
    /// Resolves the API key from the configured environment variable.
    pub fn new(config: LlmConfig) -> Result<Self, LlmError> {
        config.validate()?;
        let api_key = std::env::var(&config.api_key_env)
            .ok()
            .filter(|k| !k.trim().is_empty())
            .ok_or_else(|| {
                LlmError::Config(format!(
                    "environment variable {} is not set",
                    config.api_key_env
                ))
            })?;
        Ok(Self::with_key(config, api_key))
    }

    pub fn with_key(config: LlmConfig, api_key: String) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(config.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            config,
            api_key,
            agent,
        }
    }

    fn attempt(&self, body: &str) -> Attempt {
        let resp = self
            .agent
            .post(&self.config.endpoint)
            .header("Authorization", &format!("Bearer {}", self.api_key))
            .header("Content-Type", "application/json")
            .send(body);
        let mut resp = match resp {
            Ok(r) => r,
            Err(e) => return Attempt::Transient(format!("transport: {e}")),
        };
        let status = resp.status().as_u16();
        let mut text = String::new();
        if let Err(e) = resp.body_mut().as_reader().read_to_string(&mut text) {
            return Attempt::Transient(format!("reading body: {e}"));
        }
        match status {
            200..=299 => match extract_content(&text) {
                Ok(c) => Attempt::Done(c),
                Err(e) => Attempt::Fatal(e),
            },
            401 | 403 => Attempt::Fatal(LlmError::Config(format!(
                "HTTP {status}: credentials rejected: {}",
                truncate(&text)
            ))),
            408 | 429 | 500..=599 => {
                Attempt::Transient(format!("HTTP {status}: {}", truncate(&text)))
            }
            _ => Attempt::Fatal(LlmError::Http {
                status,
                body: truncate(&text),
            }),
        }
    }
}

fn truncate(s: &str) -> String {
    s.chars().take(500).collect()
}

fn extract_content(body: &str) -> Result<String, LlmError> {
    let v: serde_json::Value =
        serde_json::from_str(body).map_err(|e| LlmError::BadResponse(e.to_string()))?;
    v["choices"][0]["message"]["content"]
        .as_str()
        .map(str::to_string)
        .ok_or_else(|| LlmError::BadResponse(truncate(body)))
}

impl Completer for HttpCompleter {
    /// Retries transport failures and HTTP 408, 429 and 5xx with
    /// exponential backoff; 401 and 403 fail at once as configuration
    /// errors.
    fn complete(&self, request: &ChatRequest) -> Result<String, LlmError> {
        let body = serde_json::to_string(request)?;
        let mut last = String::new();
        for attempt in 0..=self.config.max_retries {
            if attempt > 0 {
                let delay = self
                    .config
                    .backoff_ms
                    .saturating_mul(1 << (attempt - 1).min(16));
                thread::sleep(Duration::from_millis(delay));
                log::info!("retrying completion (attempt {}): {last}", attempt + 1);
            }
            match self.attempt(&body) {
                Attempt::Done(text) => return Ok(text),
                Attempt::Fatal(e) => return Err(e),
                Attempt::Transient(m) => last = m,
            }
        }
        Err(LlmError::RetriesExhausted {
            attempts: self.config.max_retries + 1,
            last,
        })
    }
}

/// One request/response exchange and what became of it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transcript {
    pub request_hash: String,
    pub request: ChatRequest,
    pub response: Option<String>,
    pub error: Option<String>,
    /// `ok` or the parse error message.
    pub parse_outcome: String,
}

/// Transcripts stored as `<dir>/<request hash>.json`.
#[derive(Debug, Clone)]
pub struct TranscriptStore {
    dir: PathBuf,
}

impl TranscriptStore {
    pub fn new(dir: &Path) -> std::io::Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path_for(&self, hash: &str) -> PathBuf {
        self.dir.join(format!("{hash}.json"))
    }

    pub fn save(&self, t: &Transcript) -> Result<PathBuf, LlmError> {
        let path = self.path_for(&t.request_hash);
        write_atomic(&path, (serde_json::to_string_pretty(t)? + "\n").as_bytes())?;
        Ok(path)
    }

    pub fn load(&self, hash: &str) -> Result<Option<Transcript>, LlmError> {
        let path = self.path_for(hash);
        if !path.exists() {
            return Ok(None);
        }
        Ok(Some(serde_json::from_str(&fs::read_to_string(path)?)?))
    }
}

/// Answers requests from recorded transcripts.
pub struct ReplayCompleter {
    store: TranscriptStore,
}

impl ReplayCompleter {
    pub fn new(store: TranscriptStore) -> Self {
        Self { store }
    }
}

impl Completer for ReplayCompleter {
    fn complete(&self, request: &ChatRequest) -> Result<String, LlmError> {
        let hash = request_hash(request);
        self.store
            .load(&hash)?
            .and_then(|t| t.response)
            .ok_or(LlmError::Replay(hash))
    }
}

/// Sends `bundle`, parses the reply, and on a parse failure retries once
/// with a format reminder appended. Every exchange is returned as a
/// transcript and, when a store is given, persisted.
pub fn complete_and_parse<T>(
    completer: &dyn Completer,
    templates: &Templates,
    model: &str,
    bundle: &PromptBundle,
    store: Option<&TranscriptStore>,
    parse: impl Fn(&str) -> Result<T, GenkitError>,
) -> (Result<T, LlmError>, Vec<Transcript>) {
    let mut transcripts = Vec::new();
    let mut current = bundle.clone();
    let mut first_error = None;
    for round in 0..2 {
        let request = ChatRequest::new(model, &current);
        let mut t = Transcript {
            request_hash: request_hash(&request),
            request: request.clone(),
            response: None,
            error: None,
            parse_outcome: String::new(),
        };
        let reply = completer.complete(&request);
        let outcome = match reply {
            Err(e) => {
                t.error = Some(e.to_string());
                t.parse_outcome = "not parsed".into();
                Err(e)
            }
            Ok(text) => {
                let parsed = parse(&text);
                t.response = Some(text);
                match parsed {
                    Ok(v) => {
                        t.parse_outcome = "ok".into();
                        Ok(v)
                    }
                    Err(e) => {
                        t.parse_outcome = e.to_string();
                        Err(LlmError::Format(e))
                    }
                }
            }
        };
        if let Some(s) = store {
            if let Err(e) = s.save(&t) {
                transcripts.push(t);
                return (Err(e), transcripts);
            }
        }
        transcripts.push(t);
        match outcome {
            Err(LlmError::Format(e)) if round == 0 => {
                current = match with_format_reminder(templates, bundle, &e.to_string()) {
                    Ok(b) => b,
                    Err(err) => return (Err(err.into()), transcripts),
                };
                first_error = Some(e);
            }
            other => return (other, transcripts),
        }
    }
    let e = first_error.expect("second round only after a format error");
    (Err(LlmError::Format(e)), transcripts)
}

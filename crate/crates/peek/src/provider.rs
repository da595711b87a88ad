//! Chat-completion providers behind one contract: an HTTP client for
//! OpenAI-compatible endpoints and a deterministic record/replay pair for
//! tests.
//!
//! Replay matches requests by fingerprint (SHA-256 of the canonical request)
//! so any drift in prompt construction fails loudly instead of silently
//! replaying a stale response.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Environment variable holding the API credential.
pub const API_KEY_ENV: &str = "PEEK_API_KEY";
/// Environment variable overriding the endpoint base URL.
pub const API_BASE_ENV: &str = "PEEK_API_BASE";
/// Default OpenAI-compatible endpoint base.
pub const DEFAULT_API_BASE: &str = "https://api.openai.com";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> ChatMessage {
        ChatMessage {
            role: Role::System,
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> ChatMessage {
        ChatMessage {
            role: Role::User,
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> ChatMessage {
        ChatMessage {
            role: Role::Assistant,
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub temperature: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenUsage {
    pub input_tokens: u64,
    pub output_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub content: String,
    pub usage: Option<TokenUsage>,
}

#[derive(Debug, Error)]
pub enum ProviderError {
    #[error("missing credential: set {API_KEY_ENV}")]
    MissingCredential,
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("endpoint returned HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("endpoint response missing choices[0].message.content")]
    MissingContent,
    #[error("fixture fingerprint mismatch at entry {index}: expected {expected}, request hashes to {actual}")]
    FingerprintMismatch {
        index: usize,
        expected: String,
        actual: String,
    },
    #[error("replay fixture exhausted after {consumed} entries")]
    FixtureExhausted { consumed: usize },
    #[error("fixture file {path}: {message}")]
    FixtureIo { path: PathBuf, message: String },
}

/// Uniform chat-completion contract.
pub trait ChatProvider: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, ProviderError>;
}

/// Stable request fingerprint: SHA-256 hex of the canonical serialization
/// (sorted keys, message contents newline-normalized to `\n`). Temperature is
/// not part of the identity.
pub fn request_fingerprint(request: &ChatRequest) -> String {
    let messages: Vec<serde_json::Value> = request
        .messages
        .iter()
        .map(|m| {
            serde_json::json!({
                "content": m.content.replace("\r\n", "\n").replace('\r', "\n"),
                "role": match m.role {
                    Role::System => "system",
                    Role::User => "user",
                    Role::Assistant => "assistant",
                },
            })
        })
        .collect();
    // serde_json maps are BTree-backed, so key order is sorted and stable
    let canonical = serde_json::json!({
        "messages": messages,
        "model": request.model,
    });
    let digest = Sha256::digest(canonical.to_string().as_bytes());
    hex::encode(digest)
}

// --- HTTP provider ---

#[derive(Debug, Clone)]
pub struct HttpConfig {
    pub base_url: String,
    pub api_key: String,
    pub max_attempts: u32,
    pub backoff_base: Duration,
    pub timeout: Duration,
}

impl Default for HttpConfig {
    fn default() -> HttpConfig {
        HttpConfig {
            base_url: DEFAULT_API_BASE.to_string(),
            api_key: String::new(),
            max_attempts: 3,
            backoff_base: Duration::from_millis(250),
            timeout: Duration::from_secs(300),
        }
    }
}

/// Blocking client for `POST /v1/chat/completions`. Transport failures and
/// retryable statuses (429, 5xx) back off exponentially up to `max_attempts`.
pub struct HttpProvider {
    config: HttpConfig,
    agent: ureq::Agent,
    requests_sent: AtomicU64,
}

#[derive(Serialize)]
struct WireRequest<'a> {
    model: &'a str,
    messages: &'a [ChatMessage],
    #[serde(skip_serializing_if = "Option::is_none")]
    temperature: Option<f64>,
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
    usage: Option<WireUsage>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireMessage,
}

#[derive(Deserialize)]
struct WireMessage {
    content: Option<String>,
}

#[derive(Deserialize)]
struct WireUsage {
    prompt_tokens: Option<u64>,
    completion_tokens: Option<u64>,
}

impl HttpProvider {
    pub fn new(config: HttpConfig) -> HttpProvider {
        let agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(config.timeout))
            .build()
            .into();
        HttpProvider {
            config,
            agent,
            requests_sent: AtomicU64::new(0),
        }
    }

    /// Reads `PEEK_API_KEY` (required) and `PEEK_API_BASE` (optional).
    pub fn from_env() -> Result<HttpProvider, ProviderError> {
        let api_key = std::env::var(API_KEY_ENV).map_err(|_| ProviderError::MissingCredential)?;
        if api_key.is_empty() {
            return Err(ProviderError::MissingCredential);
        }
        let base_url = std::env::var(API_BASE_ENV).unwrap_or_else(|_| DEFAULT_API_BASE.to_string());
        Ok(HttpProvider::new(HttpConfig {
            base_url,
            api_key,
            ..HttpConfig::default()
        }))
    }

    pub fn endpoint(&self) -> String {
        format!(
            "{}/v1/chat/completions",
            self.config.base_url.trim_end_matches('/')
        )
    }

    /// Total HTTP requests issued, including retries.
    pub fn requests_sent(&self) -> u64 {
        self.requests_sent.load(Ordering::Relaxed)
    }

    fn send_once(&self, request: &ChatRequest) -> Result<(u16, String), String> {
        self.requests_sent.fetch_add(1, Ordering::Relaxed);
        let body = WireRequest {
            model: &request.model,
            messages: &request.messages,
            temperature: request.temperature,
        };
        let mut response = self
            .agent
            .post(&self.endpoint())
            .header("authorization", &format!("Bearer {}", self.config.api_key))
            .send_json(&body)
            .map_err(|e| e.to_string())?;
        let status = response.status().as_u16();
        let text = response
            .body_mut()
            .read_to_string()
            .map_err(|e| e.to_string())?;
        Ok((status, text))
    }
}

impl ChatProvider for HttpProvider {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, ProviderError> {
        let mut last_failure = String::new();
        for attempt in 1..=self.config.max_attempts {
            if attempt > 1 {
                let exponent = attempt.saturating_sub(2).min(16);
                std::thread::sleep(self.config.backoff_base * 2u32.pow(exponent));
            }
            match self.send_once(request) {
                Ok((status, text)) if (200..300).contains(&status) => {
                    let wire: WireResponse =
                        serde_json::from_str(&text).map_err(|e| ProviderError::Transport {
                            attempts: attempt,
                            message: e.to_string(),
                        })?;
                    let content = wire
                        .choices
                        .into_iter()
                        .next()
                        .and_then(|c| c.message.content)
                        .ok_or(ProviderError::MissingContent)?;
                    let usage = wire.usage.and_then(|u| {
                        Some(TokenUsage {
                            input_tokens: u.prompt_tokens?,
                            output_tokens: u.completion_tokens?,
                        })
                    });
                    return Ok(ChatResponse { content, usage });
                }
                Ok((status, body)) if status == 429 || status >= 500 => {
                    last_failure = format!("HTTP {status}: {body}");
                }
                Ok((status, body)) => return Err(ProviderError::Http { status, body }),
                Err(message) => last_failure = message,
            }
        }
        Err(ProviderError::Transport {
            attempts: self.config.max_attempts,
            message: last_failure,
        })
    }
}

// --- record / replay ---

/// One recorded exchange: the fingerprint of the request and the raw
/// response text the model returned.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixtureEntry {
    pub fingerprint: String,
    pub response: String,
}

/// Deterministic provider that serves canned responses in order, verifying
/// each request's fingerprint against the recording. Single-threaded use per
/// fixture; consumption is sequential by construction.
pub struct ReplayProvider {
    entries: Vec<FixtureEntry>,
    cursor: Mutex<usize>,
}

impl ReplayProvider {
    pub fn from_entries(entries: Vec<FixtureEntry>) -> ReplayProvider {
        ReplayProvider {
            entries,
            cursor: Mutex::new(0),
        }
    }

    /// Loads a JSONL fixture: one `{"fingerprint", "response"}` per line.
    pub fn from_file(path: &Path) -> Result<ReplayProvider, ProviderError> {
        let file = File::open(path).map_err(|e| ProviderError::FixtureIo {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let mut entries = Vec::new();
        for (lineno, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| ProviderError::FixtureIo {
                path: path.to_path_buf(),
                message: e.to_string(),
            })?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: FixtureEntry =
                serde_json::from_str(&line).map_err(|e| ProviderError::FixtureIo {
                    path: path.to_path_buf(),
                    message: format!("line {}: {e}", lineno + 1),
                })?;
            entries.push(entry);
        }
        Ok(ReplayProvider::from_entries(entries))
    }

    /// Loads and concatenates every `*.jsonl` in `dir`, sorted by file name.
    pub fn from_dir(dir: &Path) -> Result<ReplayProvider, ProviderError> {
        let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
            .map_err(|e| ProviderError::FixtureIo {
                path: dir.to_path_buf(),
                message: e.to_string(),
            })?
            .filter_map(|entry| entry.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|ext| ext == "jsonl"))
            .collect();
        paths.sort();
        let mut entries = Vec::new();
        for path in paths {
            entries.extend(ReplayProvider::from_file(&path)?.entries);
        }
        Ok(ReplayProvider::from_entries(entries))
    }

    pub fn remaining(&self) -> usize {
        self.entries.len() - *self.cursor.lock().unwrap()
    }
}

impl ChatProvider for ReplayProvider {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, ProviderError> {
        let mut cursor = self.cursor.lock().unwrap();
        let index = *cursor;
        let entry = self
            .entries
            .get(index)
            .ok_or(ProviderError::FixtureExhausted { consumed: index })?;
        let actual = request_fingerprint(request);
        if entry.fingerprint != actual {
            return Err(ProviderError::FingerprintMismatch {
                index,
                expected: entry.fingerprint.clone(),
                actual,
            });
        }
        *cursor += 1;
        Ok(ChatResponse {
            content: entry.response.clone(),
            usage: None,
        })
    }
}

/// Pass-through provider that appends every successful exchange to a JSONL
/// fixture file, creating it on first use.
pub struct RecordingProvider<P> {
    inner: P,
    sink: PathBuf,
}

impl<P: ChatProvider> RecordingProvider<P> {
    pub fn new(inner: P, sink: impl Into<PathBuf>) -> RecordingProvider<P> {
        RecordingProvider {
            inner,
            sink: sink.into(),
        }
    }
}

impl<P: ChatProvider> ChatProvider for RecordingProvider<P> {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, ProviderError> {
        let response = self.inner.complete(request)?;
        let entry = FixtureEntry {
            fingerprint: request_fingerprint(request),
            response: response.content.clone(),
        };
        let io_err = |e: std::io::Error| ProviderError::FixtureIo {
            path: self.sink.clone(),
            message: e.to_string(),
        };
        if let Some(parent) = self.sink.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent).map_err(io_err)?;
            }
        }
        let mut file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&self.sink)
            .map_err(io_err)?;
        let mut line = serde_json::to_string(&entry).expect("fixture entry serializes");
        line.push('\n');
        file.write_all(line.as_bytes()).map_err(io_err)?;
        Ok(response)
    }
}

//! Chat-completion clients: HTTP, transcript replay, closures, and an
//! on-disk response cache that can wrap any of them.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Duration;

use log::warn;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus_store::artifact::write_atomic;

pub const TOKEN_ENV: &str = "GOALFACTOR_LLM_TOKEN";

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("malformed response: {0}")]
    Response(String),
    #[error("corrupt cache entry {path}: {message}")]
    CacheCorrupt { path: PathBuf, message: String },
    #[error("cache io error: {0}")]
    CacheIo(String),
    #[error("transcript error: {0}")]
    Transcript(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

impl ChatMessage {
    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: "user".into(),
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self {
            role: "assistant".into(),
            content: content.into(),
        }
    }
}

/// Wire body of a chat-completion request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl ChatRequest {
    /// Hex SHA-256 of the canonical (key-sorted, compact) JSON body.
    pub fn cache_key(&self) -> String {
        let value = serde_json::to_value(self).expect("request serializes");
        let canonical = serde_json::to_string(&value).expect("value serializes");
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }

    pub fn user_turns(&self) -> usize {
        self.messages.iter().filter(|m| m.role == "user").count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmSettings {
    pub model: String,
    pub temperature: f64,
    #[serde(default)]
    pub seed: Option<u64>,
}

impl Default for LlmSettings {
    fn default() -> Self {
        Self {
            model: "gpt-4o".into(),
            temperature: 0.0,
            seed: None,
        }
    }
}

impl LlmSettings {
    pub fn request(&self, messages: Vec<ChatMessage>) -> ChatRequest {
        ChatRequest {
            model: self.model.clone(),
            messages,
            temperature: self.temperature,
            seed: self.seed,
        }
    }
}

/// Anything that can answer a chat request. Shared across proposal threads.
pub trait LlmClient: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<String, LlmError>;
}

// ---------------------------------------------------------------------------

/// POSTs requests to an OpenAI-style chat-completions endpoint.
pub struct HttpLlm {
    endpoint: String,
    token: Option<String>,
    max_retries: u32,
    backoff: Duration,
    client: reqwest::blocking::Client,
}

impl HttpLlm {
    pub fn new(endpoint: impl Into<String>, token: Option<String>) -> Result<Self, LlmError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(120))
            .build()
            .map_err(|e| LlmError::Transport(e.to_string()))?;
        Ok(Self {
            endpoint: endpoint.into(),
            token,
            max_retries: 3,
            backoff: Duration::from_millis(500),
            client,
        })
    }

    /// Reads the bearer token from `GOALFACTOR_LLM_TOKEN` if set.
    pub fn from_env(endpoint: impl Into<String>) -> Result<Self, LlmError> {
        Self::new(endpoint, std::env::var(TOKEN_ENV).ok())
    }

    pub fn with_retries(mut self, max_retries: u32, backoff: Duration) -> Self {
        self.max_retries = max_retries;
        self.backoff = backoff;
        self
    }

    fn attempt(&self, request: &ChatRequest) -> Result<String, (bool, LlmError)> {
        let mut builder = self.client.post(&self.endpoint).json(request);
        if let Some(token) = &self.token {
            builder = builder.bearer_auth(token);
        }
        let resp = builder.send().map_err(|e| (true, LlmError::Transport(e.to_string())))?;
        let status = resp.status();
        if !status.is_success() {
            let retry = status.is_server_error() || status.as_u16() == 429;
            return Err((retry, LlmError::Transport(format!("http status {status}"))));
        }
        let body: Value = resp.json().map_err(|e| (false, LlmError::Response(e.to_string())))?;
        extract_content(&body).map_err(|e| (false, e))
    }
}

/// Pulls `choices[0].message.content` (or `choices[0].text`) out of a response.
pub fn extract_content(body: &Value) -> Result<String, LlmError> {
    let choice = body
        .get("choices")
        .and_then(|c| c.get(0))
        .ok_or_else(|| LlmError::Response("no choices in response".into()))?;
    choice
        .pointer("/message/content")
        .or_else(|| choice.get("text"))
        .and_then(Value::as_str)
        .map(str::to_string)
        .ok_or_else(|| LlmError::Response("first choice has no text content".into()))
}

impl LlmClient for HttpLlm {
    fn complete(&self, request: &ChatRequest) -> Result<String, LlmError> {
        let mut delay = self.backoff;
        let mut attempt = 0;
        loop {
            match self.attempt(request) {
                Ok(text) => return Ok(text),
                Err((true, e)) if attempt < self.max_retries => {
                    warn!(
                        "llm request failed ({e}); retry {} of {}",
                        attempt + 1,
                        self.max_retries
                    );
                    std::thread::sleep(delay);
                    delay *= 2;
                    attempt += 1;
                }
                Err((_, e)) => return Err(e),
            }
        }
    }
}

// ---------------------------------------------------------------------------

/// One line of a replay transcript. An entry answers a request when the
/// request has exactly `turn` user messages and `contains` occurs in the
/// concatenated message contents. The first matching line wins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub turn: usize,
    pub contains: String,
    pub response: String,
}

/// Offline client that replays canned responses from a JSONL transcript.
#[derive(Debug, Clone, Default)]
pub struct ReplayLlm {
    entries: Vec<TranscriptEntry>,
}

impl ReplayLlm {
    pub fn new(entries: Vec<TranscriptEntry>) -> Self {
        Self { entries }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, LlmError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| LlmError::Transcript(format!("{}: {e}", path.display())))?;
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let entry = serde_json::from_str(line)
                .map_err(|e| LlmError::Transcript(format!("{} line {}: {e}", path.display(), i + 1)))?;
            entries.push(entry);
        }
        Ok(Self { entries })
    }
}

impl LlmClient for ReplayLlm {
    fn complete(&self, request: &ChatRequest) -> Result<String, LlmError> {
        let turn = request.user_turns();
        let haystack: String = request
            .messages
            .iter()
            .map(|m| m.content.as_str())
            .collect::<Vec<_>>()
            .join("\n");
        self.entries
            .iter()
            .find(|e| e.turn == turn && haystack.contains(&e.contains))
            .map(|e| e.response.clone())
            .ok_or_else(|| LlmError::Transport(format!("no transcript entry for user turn {turn}")))
    }
}

// ---------------------------------------------------------------------------

type Script = dyn Fn(&ChatRequest) -> Result<String, LlmError> + Send + Sync;

/// Client backed by a closure; records every request it sees.
pub struct ScriptedLlm {
    script: Box<Script>,
    calls: Mutex<Vec<ChatRequest>>,
}

impl ScriptedLlm {
    pub fn new(script: impl Fn(&ChatRequest) -> Result<String, LlmError> + Send + Sync + 'static) -> Self {
        Self {
            script: Box::new(script),
            calls: Mutex::new(Vec::new()),
        }
    }

    pub fn calls(&self) -> Vec<ChatRequest> {
        self.calls.lock().expect("poisoned").clone()
    }
}

impl LlmClient for ScriptedLlm {
    fn complete(&self, request: &ChatRequest) -> Result<String, LlmError> {
        self.calls.lock().expect("poisoned").push(request.clone());
        (self.script)(request)
    }
}

// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
struct CacheRecord {
    request: ChatRequest,
    response: String,
}

/// Content-addressed response cache: one JSON file per request, named by the
/// request's [`ChatRequest::cache_key`].
pub struct CachedLlm<C> {
    inner: C,
    dir: PathBuf,
}

impl<C: LlmClient> CachedLlm<C> {
    pub fn new(inner: C, dir: impl Into<PathBuf>) -> Self {
        Self { inner, dir: dir.into() }
    }

    pub fn entry_path(&self, request: &ChatRequest) -> PathBuf {
        self.dir.join(format!("{}.json", request.cache_key()))
    }
}

impl<C: LlmClient> LlmClient for CachedLlm<C> {
    fn complete(&self, request: &ChatRequest) -> Result<String, LlmError> {
        let path = self.entry_path(request);
        match fs::read(&path) {
            Ok(bytes) => {
                let record: CacheRecord = serde_json::from_slice(&bytes).map_err(|e| LlmError::CacheCorrupt {
                    path: path.clone(),
                    message: e.to_string(),
                })?;
                if &record.request != request {
                    return Err(LlmError::CacheCorrupt {
                        path,
                        message: "stored request does not match its key".into(),
                    });
                }
                return Ok(record.response);
            }
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {}
            Err(e) => return Err(LlmError::CacheIo(e.to_string())),
        }
        let response = self.inner.complete(request)?;
        let record = CacheRecord {
            request: request.clone(),
            response,
        };
        let bytes = serde_json::to_vec_pretty(&record).expect("record serializes");
        write_atomic(&path, &bytes).map_err(|e| LlmError::CacheIo(e.to_string()))?;
        Ok(record.response)
    }
}

impl<T: LlmClient + ?Sized> LlmClient for Box<T> {
    fn complete(&self, request: &ChatRequest) -> Result<String, LlmError> {
        (**self).complete(request)
    }
}

impl<T: LlmClient + ?Sized> LlmClient for std::sync::Arc<T> {
    fn complete(&self, request: &ChatRequest) -> Result<String, LlmError> {
        (**self).complete(request)
    }
}

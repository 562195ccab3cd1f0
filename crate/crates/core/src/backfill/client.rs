//! Synthesizer clients.
//!
//! The synthesizer is a text-in/text-out completion service. Backends:
//!
//! - [`MockBackend`]: deterministic well-formed replies derived from the
//!   prompt, for tests and dry runs;
//! - [`ScriptedBackend`]: replays a fixed queue of replies or timeouts;
//! - [`ReplayBackend`]: serves a recorded transcript keyed by prompt hash;
//! - [`HttpBackend`]: POSTs `{prompt, max_tokens, temperature}` as JSON.
//!
//! [`Recorder`] wraps any backend and keeps every exchange so runs can be
//! inspected or saved as a replay transcript.

use std::collections::{HashMap, VecDeque};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};
use thiserror::Error;

use crate::response::ResponseTags;

use super::prompt::{ACTION_LABEL, HINT_LABEL, STEP_LABEL};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ClientError {
    #[error("synthesizer timed out after {0:?}")]
    Timeout(Duration),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("no recorded response for prompt hash {0}")]
    ReplayMiss(String),
    #[error("scripted backend has no replies left")]
    ScriptExhausted,
    #[error("cannot load transcript {path}: {reason}")]
    Transcript { path: PathBuf, reason: String },
}

impl ClientError {
    /// Timeouts and transport failures count as an attempt and are retried.
    pub fn is_retryable(&self) -> bool {
        matches!(self, Self::Timeout(_) | Self::Transport(_))
    }
}

pub trait CompletionBackend: Send + Sync {
    fn complete(&self, prompt: &str) -> Result<String, ClientError>;
}

pub fn prompt_hash(prompt: &str) -> String {
    hex::encode(Sha256::digest(prompt.as_bytes()))
}

/// Where the synthesizer lives: `mock`, `replay:<path>` or an http(s) URL.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Endpoint {
    Mock,
    Replay(PathBuf),
    Http(String),
}

impl Endpoint {
    pub fn parse(spec: &str) -> Result<Self, ClientError> {
        let spec = spec.trim();
        if spec == "mock" {
            return Ok(Self::Mock);
        }
        if let Some(path) = spec.strip_prefix("replay:") {
            return Ok(Self::Replay(PathBuf::from(path)));
        }
        if spec.starts_with("http://") || spec.starts_with("https://") {
            return Ok(Self::Http(spec.to_string()));
        }
        Err(ClientError::Transport(format!(
            "unrecognized synthesizer endpoint `{spec}` (expected mock, replay:<path> or http(s)://...)"
        )))
    }
}

/// Synthesizer handle used by the backfill pipeline.
#[derive(Clone)]
pub struct SynthesizerClient {
    pub backend: Arc<dyn CompletionBackend>,
    pub timeout: Duration,
    pub max_attempts: usize,
    pub tags: ResponseTags,
}

impl std::fmt::Debug for SynthesizerClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SynthesizerClient")
            .field("timeout", &self.timeout)
            .field("max_attempts", &self.max_attempts)
            .field("tags", &self.tags)
            .finish_non_exhaustive()
    }
}

impl SynthesizerClient {
    pub fn new(backend: Arc<dyn CompletionBackend>, max_attempts: usize) -> Self {
        Self {
            backend,
            timeout: Duration::from_secs(120),
            max_attempts: max_attempts.max(1),
            tags: ResponseTags::default(),
        }
    }

    pub fn mock() -> Self {
        Self::new(Arc::new(MockBackend::default()), 1)
    }

    pub fn from_endpoint(endpoint: &Endpoint, timeout: Duration, max_attempts: usize) -> Result<Self, ClientError> {
        let backend: Arc<dyn CompletionBackend> = match endpoint {
            Endpoint::Mock => Arc::new(MockBackend::default()),
            Endpoint::Replay(path) => Arc::new(ReplayBackend::load(path)?),
            Endpoint::Http(url) => Arc::new(HttpBackend::new(url, timeout)?),
        };
        Ok(Self {
            timeout,
            ..Self::new(backend, max_attempts)
        })
    }

    pub fn with_tags(mut self, tags: ResponseTags) -> Self {
        self.tags = tags;
        self
    }

    pub fn complete(&self, prompt: &str) -> Result<String, ClientError> {
        self.backend.complete(prompt)
    }
}

fn section<'a>(prompt: &'a str, label: &str) -> &'a str {
    let Some(start) = prompt.rfind(label) else {
        return "";
    };
    let body = &prompt[start + label.len()..];
    let end = body.find("\n### ").unwrap_or(body.len());
    body[..end].trim()
}

/// Produces a well-formed reply for any prompt, deterministically.
#[derive(Debug, Clone, Default)]
pub struct MockBackend {
    pub tags: ResponseTags,
}

impl CompletionBackend for MockBackend {
    fn complete(&self, prompt: &str) -> Result<String, ClientError> {
        let step = section(prompt, STEP_LABEL);
        let hint = section(prompt, HINT_LABEL);
        let action = section(prompt, ACTION_LABEL);
        let tool = action
            .strip_prefix("<function=")
            .and_then(|rest| rest.split('>').next())
            .unwrap_or("unknown");
        let tag = &prompt_hash(prompt)[..12];
        let hint_words: Vec<&str> = hint.split_whitespace().take(12).collect();
        let reasoning = format!(
            "Step {step} [{tag}]: the working intent is \"{}\". Checking the latest observation against that intent, the next useful move is a `{tool}` call, and its result will tell whether the current hypothesis about the issue still holds.",
            hint_words.join(" ")
        );
        let digest = format!("Step {step} [{tag}]: {tool} to follow up on \"{}\".", hint_words.join(" "));
        Ok(format!(
            "{}\n{}\n",
            self.tags.wrap_reasoning(&reasoning),
            self.tags.wrap_digest(&digest)
        ))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ScriptedReply {
    Text(String),
    Timeout,
    TransportError(String),
}

/// Serves replies from a fixed queue, in order.
#[derive(Debug, Default)]
pub struct ScriptedBackend {
    queue: Mutex<VecDeque<ScriptedReply>>,
}

impl ScriptedBackend {
    pub fn new(replies: impl IntoIterator<Item = ScriptedReply>) -> Self {
        Self {
            queue: Mutex::new(replies.into_iter().collect()),
        }
    }

    pub fn texts<S: Into<String>>(replies: impl IntoIterator<Item = S>) -> Self {
        Self::new(replies.into_iter().map(|s| ScriptedReply::Text(s.into())))
    }

    pub fn remaining(&self) -> usize {
        self.queue.lock().expect("script lock").len()
    }
}

impl CompletionBackend for ScriptedBackend {
    fn complete(&self, _prompt: &str) -> Result<String, ClientError> {
        match self.queue.lock().expect("script lock").pop_front() {
            Some(ScriptedReply::Text(t)) => Ok(t),
            Some(ScriptedReply::Timeout) => Err(ClientError::Timeout(Duration::ZERO)),
            Some(ScriptedReply::TransportError(e)) => Err(ClientError::Transport(e)),
            None => Err(ClientError::ScriptExhausted),
        }
    }
}

/// One line of a replay transcript.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub prompt_hash: String,
    pub response: String,
}

/// Serves responses recorded against prompt hashes. Repeated identical
/// prompts consume recorded responses in order.
#[derive(Debug, Default)]
pub struct ReplayBackend {
    entries: Mutex<HashMap<String, VecDeque<String>>>,
}

impl ReplayBackend {
    pub fn from_entries(entries: impl IntoIterator<Item = TranscriptEntry>) -> Self {
        let mut map: HashMap<String, VecDeque<String>> = HashMap::new();
        for e in entries {
            map.entry(e.prompt_hash).or_default().push_back(e.response);
        }
        Self {
            entries: Mutex::new(map),
        }
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        let entries = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| serde_json::from_str(l).map_err(|e| format!("line {}: {e}", i + 1)))
            .collect::<Result<Vec<TranscriptEntry>, String>>()?;
        Ok(Self::from_entries(entries))
    }

    pub fn load(path: &Path) -> Result<Self, ClientError> {
        let text = std::fs::read_to_string(path).map_err(|e| ClientError::Transcript {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        Self::parse(&text).map_err(|reason| ClientError::Transcript {
            path: path.to_path_buf(),
            reason,
        })
    }
}

impl CompletionBackend for ReplayBackend {
    fn complete(&self, prompt: &str) -> Result<String, ClientError> {
        let hash = prompt_hash(prompt);
        self.entries
            .lock()
            .expect("replay lock")
            .get_mut(&hash)
            .and_then(VecDeque::pop_front)
            .ok_or(ClientError::ReplayMiss(hash))
    }
}

#[derive(Serialize)]
struct HttpRequest<'a> {
    prompt: &'a str,
    max_tokens: usize,
    temperature: f64,
}

/// Plain JSON completion endpoint.
pub struct HttpBackend {
    url: String,
    http: reqwest::blocking::Client,
    timeout: Duration,
    pub max_tokens: usize,
    pub temperature: f64,
}

impl HttpBackend {
    pub fn new(url: &str, timeout: Duration) -> Result<Self, ClientError> {
        let http = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| ClientError::Transport(e.to_string()))?;
        Ok(Self {
            url: url.to_string(),
            http,
            timeout,
            max_tokens: 4096,
            temperature: 0.0,
        })
    }
}

/// Accepts `{"text": ..}`, `{"response": ..}`, `{"completion": ..}` or an
/// OpenAI-style `choices` array.
pub fn extract_completion(body: &serde_json::Value) -> Option<String> {
    for key in ["text", "response", "completion"] {
        if let Some(s) = body.get(key).and_then(|v| v.as_str()) {
            return Some(s.to_string());
        }
    }
    let choice = body.get("choices")?.get(0)?;
    choice
        .get("text")
        .or_else(|| choice.get("message").and_then(|m| m.get("content")))
        .and_then(|v| v.as_str())
        .map(str::to_string)
}

impl CompletionBackend for HttpBackend {
    fn complete(&self, prompt: &str) -> Result<String, ClientError> {
        let resp = self
            .http
            .post(&self.url)
            .json(&HttpRequest {
                prompt,
                max_tokens: self.max_tokens,
                temperature: self.temperature,
            })
            .send()
            .map_err(|e| {
                if e.is_timeout() {
                    ClientError::Timeout(self.timeout)
                } else {
                    ClientError::Transport(e.to_string())
                }
            })?;
        let status = resp.status();
        if !status.is_success() {
            return Err(ClientError::Transport(format!("HTTP {status}")));
        }
        let body: serde_json::Value = resp.json().map_err(|e| ClientError::Transport(e.to_string()))?;
        extract_completion(&body).ok_or_else(|| ClientError::Transport("response body has no completion text".into()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Exchange {
    pub prompt: String,
    pub response: Result<String, ClientError>,
}

/// Backend wrapper that records every exchange.
pub struct Recorder {
    inner: Arc<dyn CompletionBackend>,
    log: Mutex<Vec<Exchange>>,
}

impl Recorder {
    pub fn new(inner: Arc<dyn CompletionBackend>) -> Self {
        Self {
            inner,
            log: Mutex::new(Vec::new()),
        }
    }

    pub fn exchanges(&self) -> Vec<Exchange> {
        self.log.lock().expect("recorder lock").clone()
    }

    pub fn prompts(&self) -> Vec<String> {
        self.exchanges().into_iter().map(|e| e.prompt).collect()
    }

    /// Successful exchanges as replay transcript JSONL.
    pub fn transcript_jsonl(&self) -> String {
        self.exchanges()
            .into_iter()
            .filter_map(|e| {
                e.response.ok().map(|response| TranscriptEntry {
                    prompt_hash: prompt_hash(&e.prompt),
                    response,
                })
            })
            .map(|e| serde_json::to_string(&e).expect("entry serializes") + "\n")
            .collect()
    }
}

impl CompletionBackend for Recorder {
    fn complete(&self, prompt: &str) -> Result<String, ClientError> {
        let response = self.inner.complete(prompt);
        self.log.lock().expect("recorder lock").push(Exchange {
            prompt: prompt.to_string(),
            response: response.clone(),
        });
        response
    }
}

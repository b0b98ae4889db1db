//! Text-generation backends.
//!
//! Two implementations of [`LlmClient`]: [`OpenAiClient`] talks to any
//! OpenAI-compatible `/chat/completions` endpoint with bounded retries, and
//! [`ScriptedLlm`] replays a fixed list of responses for tests and offline
//! replays.

use std::collections::{BTreeMap, VecDeque};
use std::path::Path;
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::{DecodingParams, Question};

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
    pub fn system(content: impl Into<String>) -> Self {
        Self {
            role: Role::System,
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: Role::User,
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self {
            role: Role::Assistant,
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Completion {
    pub text: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LlmError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("scripted backend has no remaining responses")]
    ScriptExhausted,
    #[error("scripted failure: {0}")]
    Scripted(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("malformed completion response: {0}")]
    MalformedResponse(String),
}

pub trait LlmClient: Send + Sync {
    fn complete(
        &self,
        messages: &[ChatMessage],
        params: &DecodingParams,
    ) -> Result<Completion, LlmError>;
}

impl<T: LlmClient + ?Sized> LlmClient for Arc<T> {
    fn complete(
        &self,
        messages: &[ChatMessage],
        params: &DecodingParams,
    ) -> Result<Completion, LlmError> {
        (**self).complete(messages, params)
    }
}

fn check_request(messages: &[ChatMessage]) -> Result<(), LlmError> {
    match messages.last() {
        None => Err(LlmError::InvalidRequest("no messages".into())),
        Some(m) if m.role != Role::User => Err(LlmError::InvalidRequest(
            "last message must have role=user".into(),
        )),
        Some(_) => Ok(()),
    }
}

pub(crate) fn whitespace_tokens(text: &str) -> u64 {
    text.split_whitespace().count() as u64
}

/// One entry in a response script: either text to return or a failure to
/// raise. On disk a script is a JSON array whose items are strings or
/// `{"error": "..."}` objects.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScriptStep {
    Reply(String),
    Fail { error: String },
}

impl From<&str> for ScriptStep {
    fn from(s: &str) -> Self {
        ScriptStep::Reply(s.to_string())
    }
}

impl From<String> for ScriptStep {
    fn from(s: String) -> Self {
        ScriptStep::Reply(s)
    }
}

/// A request observed by the scripted backend.
#[derive(Debug, Clone, PartialEq)]
pub struct LoggedCall {
    pub messages: Vec<ChatMessage>,
    pub params: DecodingParams,
}

impl LoggedCall {
    /// All message contents joined, for substring assertions.
    pub fn prompt_text(&self) -> String {
        self.messages
            .iter()
            .map(|m| m.content.as_str())
            .collect::<Vec<_>>()
            .join("\n")
    }
}

#[derive(Debug, Default)]
struct ScriptState {
    remaining: VecDeque<ScriptStep>,
    log: Vec<LoggedCall>,
}

/// Deterministic backend returning scripted responses in order.
///
/// Access is serialized, so the order of responses is total even when the
/// client is shared between threads. Token counts are whitespace splits.
#[derive(Debug, Default)]
pub struct ScriptedLlm {
    state: Mutex<ScriptState>,
}

impl ScriptedLlm {
    pub fn new<I, S>(steps: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<ScriptStep>,
    {
        Self {
            state: Mutex::new(ScriptState {
                remaining: steps.into_iter().map(Into::into).collect(),
                log: Vec::new(),
            }),
        }
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, ScriptLoadError> {
        let text = std::fs::read_to_string(path.as_ref())?;
        let steps: Vec<ScriptStep> = serde_json::from_str(&text)?;
        Ok(Self::new(steps))
    }

    pub fn calls(&self) -> Vec<LoggedCall> {
        self.state.lock().expect("script lock").log.clone()
    }

    pub fn call_count(&self) -> usize {
        self.state.lock().expect("script lock").log.len()
    }

    pub fn remaining(&self) -> usize {
        self.state.lock().expect("script lock").remaining.len()
    }
}

impl LlmClient for ScriptedLlm {
    fn complete(
        &self,
        messages: &[ChatMessage],
        params: &DecodingParams,
    ) -> Result<Completion, LlmError> {
        check_request(messages)?;
        let mut state = self.state.lock().expect("script lock");
        state.log.push(LoggedCall {
            messages: messages.to_vec(),
            params: *params,
        });
        match state.remaining.pop_front() {
            None => Err(LlmError::ScriptExhausted),
            Some(ScriptStep::Fail { error }) => Err(LlmError::Scripted(error)),
            Some(ScriptStep::Reply(text)) => Ok(Completion {
                prompt_tokens: messages.iter().map(|m| whitespace_tokens(&m.content)).sum(),
                completion_tokens: whitespace_tokens(&text),
                text,
            }),
        }
    }
}

#[derive(Debug, Error)]
pub enum ScriptLoadError {
    #[error("reading script: {0}")]
    Io(#[from] std::io::Error),
    #[error("parsing script: {0}")]
    Json(#[from] serde_json::Error),
}

/// Hands out the client to use for a given question.
///
/// A single shared client serves every question; a [`ScriptBook`] gives each
/// question its own script so concurrent replays stay deterministic.
pub trait LlmSource: Send + Sync {
    fn client_for(&self, question: &Question) -> Arc<dyn LlmClient>;
}

impl LlmSource for Arc<dyn LlmClient> {
    fn client_for(&self, _question: &Question) -> Arc<dyn LlmClient> {
        Arc::clone(self)
    }
}

/// Per-question scripts keyed by question id.
#[derive(Debug, Default)]
pub struct ScriptBook {
    scripts: BTreeMap<String, Arc<ScriptedLlm>>,
}

impl ScriptBook {
    pub fn new(scripts: BTreeMap<String, Vec<ScriptStep>>) -> Self {
        Self {
            scripts: scripts
                .into_iter()
                .map(|(id, steps)| (id, Arc::new(ScriptedLlm::new(steps))))
                .collect(),
        }
    }

    pub fn get(&self, id: &str) -> Option<&Arc<ScriptedLlm>> {
        self.scripts.get(id)
    }
}

impl LlmSource for ScriptBook {
    fn client_for(&self, question: &Question) -> Arc<dyn LlmClient> {
        match self.scripts.get(&question.id) {
            Some(s) => s.clone(),
            // unknown ids get an empty script and fail with ScriptExhausted
            None => Arc::new(ScriptedLlm::default()),
        }
    }
}

/// A script file holds either one shared array of responses or an object
/// mapping question ids to their own arrays.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum ScriptFile {
    Shared(Vec<ScriptStep>),
    PerQuestion(BTreeMap<String, Vec<ScriptStep>>),
}

impl ScriptFile {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ScriptLoadError> {
        let text = std::fs::read_to_string(path.as_ref())?;
        Ok(serde_json::from_str(&text)?)
    }
}

#[derive(Debug, Clone)]
pub struct OpenAiConfig {
    pub base_url: String,
    pub model: String,
    pub api_key: Option<String>,
    pub timeout: Duration,
    /// Total attempts per request, including the first.
    pub max_attempts: u32,
    pub backoff_base: Duration,
    pub max_in_flight: usize,
}

impl Default for OpenAiConfig {
    fn default() -> Self {
        Self {
            base_url: "https://api.openai.com/v1".into(),
            model: "gpt-3.5-turbo".into(),
            api_key: None,
            timeout: Duration::from_secs(120),
            max_attempts: 3,
            backoff_base: Duration::from_millis(500),
            max_in_flight: 4,
        }
    }
}

pub const API_KEY_ENV: &str = "OPENAI_API_KEY";
pub const BASE_URL_ENV: &str = "OPENAI_BASE_URL";

impl OpenAiConfig {
    /// Fills the API key and base URL from the environment when present.
    pub fn from_env(mut self) -> Self {
        if let Ok(key) = std::env::var(API_KEY_ENV) {
            if !key.is_empty() {
                self.api_key = Some(key);
            }
        }
        if let Ok(url) = std::env::var(BASE_URL_ENV) {
            if !url.is_empty() {
                self.base_url = url;
            }
        }
        self
    }
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: &'a [ChatMessage],
    temperature: f64,
    max_tokens: u32,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
    #[serde(default)]
    usage: Option<Usage>,
}

#[derive(Deserialize)]
struct Choice {
    message: ResponseMessage,
}

#[derive(Deserialize)]
struct ResponseMessage {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize)]
struct Usage {
    #[serde(default)]
    prompt_tokens: u64,
    #[serde(default)]
    completion_tokens: u64,
}

/// Counting semaphore bounding concurrent requests.
#[derive(Debug)]
struct Gate {
    permits: Mutex<usize>,
    cv: Condvar,
}

impl Gate {
    fn new(n: usize) -> Self {
        Self {
            permits: Mutex::new(n.max(1)),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> GatePermit<'_> {
        let mut p = self.permits.lock().expect("gate lock");
        while *p == 0 {
            p = self.cv.wait(p).expect("gate lock");
        }
        *p -= 1;
        GatePermit(self)
    }
}

struct GatePermit<'a>(&'a Gate);

impl Drop for GatePermit<'_> {
    fn drop(&mut self) {
        *self.0.permits.lock().expect("gate lock") += 1;
        self.0.cv.notify_one();
    }
}

enum Attempt {
    Retry(String),
    Fatal(LlmError),
}

/// Blocking client for OpenAI-compatible chat-completions services.
pub struct OpenAiClient {
    config: OpenAiConfig,
    http: reqwest::blocking::Client,
    gate: Gate,
}

impl std::fmt::Debug for OpenAiClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("OpenAiClient")
            .field("base_url", &self.config.base_url)
            .field("model", &self.config.model)
            .finish()
    }
}

impl OpenAiClient {
    pub fn new(config: OpenAiConfig) -> Result<Self, LlmError> {
        let http = reqwest::blocking::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| LlmError::Transport(e.to_string()))?;
        let gate = Gate::new(config.max_in_flight);
        Ok(Self { config, http, gate })
    }

    pub fn config(&self) -> &OpenAiConfig {
        &self.config
    }

    fn endpoint(&self) -> String {
        format!("{}/chat/completions", self.config.base_url.trim_end_matches('/'))
    }

    fn attempt(&self, body: &ChatRequest<'_>) -> Result<Completion, Attempt> {
        let mut req = self.http.post(self.endpoint()).json(body);
        if let Some(key) = &self.config.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| {
            if e.is_timeout() || e.is_connect() || e.is_request() {
                Attempt::Retry(e.to_string())
            } else {
                Attempt::Fatal(LlmError::Transport(e.to_string()))
            }
        })?;
        let status = resp.status();
        if status.as_u16() == 429 || status.is_server_error() {
            return Err(Attempt::Retry(format!("HTTP {status}")));
        }
        if !status.is_success() {
            let text = resp.text().unwrap_or_default();
            return Err(Attempt::Fatal(LlmError::Transport(format!(
                "HTTP {status}: {text}"
            ))));
        }
        let text = resp
            .text()
            .map_err(|e| Attempt::Retry(e.to_string()))?;
        let parsed: ChatResponse = serde_json::from_str(&text)
            .map_err(|e| Attempt::Fatal(LlmError::MalformedResponse(e.to_string())))?;
        let content = parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| {
                Attempt::Fatal(LlmError::MalformedResponse("no choices[0].message.content".into()))
            })?;
        let (prompt_tokens, completion_tokens) = match parsed.usage {
            Some(u) => (u.prompt_tokens, u.completion_tokens),
            None => (
                body.messages.iter().map(|m| whitespace_tokens(&m.content)).sum(),
                whitespace_tokens(&content),
            ),
        };
        Ok(Completion {
            text: content,
            prompt_tokens,
            completion_tokens,
        })
    }
}

impl LlmClient for OpenAiClient {
    fn complete(
        &self,
        messages: &[ChatMessage],
        params: &DecodingParams,
    ) -> Result<Completion, LlmError> {
        check_request(messages)?;
        let body = ChatRequest {
            model: &self.config.model,
            messages,
            temperature: params.temperature,
            max_tokens: params.max_output_tokens,
        };
        let _permit = self.gate.acquire();
        let attempts = self.config.max_attempts.max(1);
        let mut last = String::new();
        for n in 0..attempts {
            if n > 0 {
                let delay = self.config.backoff_base * 2u32.saturating_pow(n - 1);
                log::warn!("retrying chat completion (attempt {}): {last}", n + 1);
                std::thread::sleep(delay);
            }
            match self.attempt(&body) {
                Ok(c) => return Ok(c),
                Err(Attempt::Fatal(e)) => return Err(e),
                Err(Attempt::Retry(msg)) => last = msg,
            }
        }
        Err(LlmError::Transport(format!(
            "giving up after {attempts} attempts: {last}"
        )))
    }
}

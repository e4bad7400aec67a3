//! Chat backends: the trait, deterministic mocks, and live HTTP clients.

use std::collections::VecDeque;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use base64::Engine;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::prompts::MOCK_HOUSE_REPLY;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

mod b64 {
    use base64::Engine;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(data: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&base64::engine::general_purpose::STANDARD.encode(data))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let text = String::deserialize(d)?;
        base64::engine::general_purpose::STANDARD
            .decode(text)
            .map_err(serde::de::Error::custom)
    }
}

/// An image sent along with a user message.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Attachment {
    pub media_type: String,
    #[serde(with = "b64")]
    pub data: Vec<u8>,
}

impl Attachment {
    pub fn png(data: Vec<u8>) -> Self {
        Self {
            media_type: "image/png".into(),
            data,
        }
    }

    pub fn base64(&self) -> String {
        base64::engine::general_purpose::STANDARD.encode(&self.data)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image: Option<Attachment>,
}

impl Message {
    pub fn user(text: impl Into<String>) -> Self {
        Self {
            role: Role::User,
            text: text.into(),
            image: None,
        }
    }

    pub fn user_with_image(text: impl Into<String>, image: Attachment) -> Self {
        Self {
            image: Some(image),
            ..Self::user(text)
        }
    }

    pub fn assistant(text: impl Into<String>) -> Self {
        Self {
            role: Role::Assistant,
            text: text.into(),
            image: None,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TranscriptError {
    #[error("message {index} repeats role {role:?}")]
    RoleNotAlternating { index: usize, role: Role },
    #[error("message {index}: system messages belong in the system field")]
    SystemInline { index: usize },
    #[error("message {index}: only user messages may carry images")]
    ImageOnAssistant { index: usize },
    #[error("the first message must come from the user")]
    NotUserFirst,
}

/// Ordered chat history. Roles alternate starting with the user, and only
/// user messages carry images.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub system: Option<String>,
    pub messages: Vec<Message>,
}

impl Transcript {
    pub fn new(system: Option<String>) -> Self {
        Self {
            system,
            messages: Vec::new(),
        }
    }

    pub fn push(&mut self, message: Message) -> Result<(), TranscriptError> {
        let index = self.messages.len();
        Self::check(index, self.messages.last(), &message)?;
        self.messages.push(message);
        Ok(())
    }

    fn check(index: usize, prev: Option<&Message>, m: &Message) -> Result<(), TranscriptError> {
        if m.role == Role::System {
            return Err(TranscriptError::SystemInline { index });
        }
        if m.image.is_some() && m.role != Role::User {
            return Err(TranscriptError::ImageOnAssistant { index });
        }
        match prev {
            None if m.role != Role::User => Err(TranscriptError::NotUserFirst),
            Some(p) if p.role == m.role => Err(TranscriptError::RoleNotAlternating { index, role: m.role }),
            _ => Ok(()),
        }
    }

    pub fn validate(&self) -> Result<(), TranscriptError> {
        let mut prev = None;
        for (i, m) in self.messages.iter().enumerate() {
            Self::check(i, prev, m)?;
            prev = Some(m);
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.messages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.messages.is_empty()
    }

    pub fn last_assistant(&self) -> Option<&Message> {
        self.messages.iter().rev().find(|m| m.role == Role::Assistant)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecodingParams {
    /// `None` leaves the provider default in place.
    pub temperature: Option<f64>,
    pub top_k: Option<u32>,
    pub max_tokens: u32,
    pub stop_sequences: Vec<String>,
}

impl Default for DecodingParams {
    fn default() -> Self {
        Self {
            temperature: None,
            top_k: None,
            max_tokens: 3000,
            stop_sequences: Vec::new(),
        }
    }
}

impl DecodingParams {
    pub fn deterministic() -> Self {
        Self {
            temperature: Some(0.0),
            top_k: Some(1),
            ..Self::default()
        }
    }

    pub fn is_deterministic(&self) -> bool {
        self.temperature == Some(0.0) && self.top_k == Some(1)
    }
}

/// One call to a backend. A trailing assistant message is a prefill that the
/// reply continues.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub system: Option<String>,
    pub messages: Vec<Message>,
    pub params: DecodingParams,
}

impl ChatRequest {
    pub fn prefill(&self) -> Option<&str> {
        self.messages
            .last()
            .filter(|m| m.role == Role::Assistant)
            .map(|m| m.text.as_str())
    }

    /// Text of every user message, joined.
    pub fn user_text(&self) -> String {
        self.messages
            .iter()
            .filter(|m| m.role == Role::User)
            .map(|m| m.text.as_str())
            .collect::<Vec<_>>()
            .join("\n")
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BackendError {
    #[error("backend returned status {code}: {body}")]
    Status { code: u16, body: String },
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("request timed out")]
    Timeout,
    #[error("scripted backend has no replies left")]
    ScriptExhausted,
    #[error("no cassette entry matches the request")]
    CassetteMiss,
    #[error("backend configuration: {0}")]
    Config(String),
}

impl BackendError {
    /// Whether repeating the same request may succeed.
    pub fn retryable(&self) -> bool {
        match self {
            BackendError::Status { code, .. } => *code == 429 || *code >= 500,
            BackendError::Transport(_) | BackendError::Timeout => true,
            _ => false,
        }
    }
}

pub trait Backend: Send + Sync {
    fn send(&self, request: &ChatRequest) -> Result<String, BackendError>;

    fn name(&self) -> &str {
        "backend"
    }
}

impl<B: Backend + ?Sized> Backend for Arc<B> {
    fn send(&self, request: &ChatRequest) -> Result<String, BackendError> {
        (**self).send(request)
    }

    fn name(&self) -> &str {
        (**self).name()
    }
}

/// Cut `text` at the earliest stop sequence, dropping the sequence itself,
/// the way hosted APIs do.
pub fn apply_stop_sequences(text: &str, stops: &[String]) -> String {
    let cut = stops
        .iter()
        .filter(|s| !s.is_empty())
        .filter_map(|s| text.find(s.as_str()))
        .min();
    match cut {
        Some(i) => text[..i].to_string(),
        None => text.to_string(),
    }
}

/// Strip a prefill from the front of a canned reply, if the reply repeats it.
fn continue_after_prefill(reply: &str, request: &ChatRequest) -> String {
    match request.prefill() {
        Some(p) if !p.is_empty() && reply.starts_with(p) => reply[p.len()..].to_string(),
        _ => reply.to_string(),
    }
}

/// Replays a fixed queue of replies and records every request.
#[derive(Debug, Default)]
pub struct ScriptedBackend {
    replies: Mutex<VecDeque<Result<String, BackendError>>>,
    requests: Mutex<Vec<ChatRequest>>,
}

impl ScriptedBackend {
    pub fn new<I, S>(replies: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self::with_results(replies.into_iter().map(|s| Ok(s.into())))
    }

    pub fn with_results<I>(results: I) -> Self
    where
        I: IntoIterator<Item = Result<String, BackendError>>,
    {
        Self {
            replies: Mutex::new(results.into_iter().collect()),
            requests: Mutex::new(Vec::new()),
        }
    }

    pub fn push(&self, reply: impl Into<String>) {
        self.replies.lock().unwrap().push_back(Ok(reply.into()));
    }

    pub fn requests(&self) -> Vec<ChatRequest> {
        self.requests.lock().unwrap().clone()
    }

    pub fn remaining(&self) -> usize {
        self.replies.lock().unwrap().len()
    }
}

impl Backend for ScriptedBackend {
    fn send(&self, request: &ChatRequest) -> Result<String, BackendError> {
        self.requests.lock().unwrap().push(request.clone());
        let next = self.replies.lock().unwrap().pop_front();
        let reply = next.ok_or(BackendError::ScriptExhausted)??;
        Ok(apply_stop_sequences(&reply, &request.params.stop_sequences))
    }

    fn name(&self) -> &str {
        "scripted"
    }
}

/// Always answers with the same text.
#[derive(Debug, Clone)]
pub struct FixedBackend {
    reply: String,
    name: String,
}

impl FixedBackend {
    pub fn new(name: impl Into<String>, reply: impl Into<String>) -> Self {
        Self {
            reply: reply.into(),
            name: name.into(),
        }
    }

    /// The complete house from the in-context example.
    pub fn house() -> Self {
        Self::new("mock-house", MOCK_HOUSE_REPLY)
    }
}

impl Backend for FixedBackend {
    fn send(&self, request: &ChatRequest) -> Result<String, BackendError> {
        let reply = continue_after_prefill(&self.reply, request);
        Ok(apply_stop_sequences(&reply, &request.params.stop_sequences))
    }

    fn name(&self) -> &str {
        &self.name
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CassetteEntry {
    /// Substring searched for in the latest user message.
    #[serde(rename = "match")]
    pub pattern: String,
    pub responses: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Cassette {
    pub entries: Vec<CassetteEntry>,
}

/// Recorded replies keyed by prompt content. Each entry answers with its
/// responses in order and then keeps repeating the last one.
#[derive(Debug)]
pub struct CassetteBackend {
    cassette: Cassette,
    cursors: Mutex<Vec<usize>>,
}

impl CassetteBackend {
    pub fn new(cassette: Cassette) -> Self {
        let n = cassette.entries.len();
        Self {
            cassette,
            cursors: Mutex::new(vec![0; n]),
        }
    }

    pub fn load(path: &Path) -> Result<Self, BackendError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| BackendError::Config(format!("{}: {e}", path.display())))?;
        let cassette: Cassette =
            serde_json::from_str(&text).map_err(|e| BackendError::Config(format!("{}: {e}", path.display())))?;
        Ok(Self::new(cassette))
    }
}

impl Backend for CassetteBackend {
    fn send(&self, request: &ChatRequest) -> Result<String, BackendError> {
        let latest = request
            .messages
            .iter()
            .rev()
            .find(|m| m.role == Role::User)
            .map(|m| m.text.as_str())
            .unwrap_or("");
        let all = request.user_text();
        let index = self
            .cassette
            .entries
            .iter()
            .position(|e| latest.contains(&e.pattern))
            .or_else(|| self.cassette.entries.iter().position(|e| all.contains(&e.pattern)))
            .ok_or(BackendError::CassetteMiss)?;
        let entry = &self.cassette.entries[index];
        if entry.responses.is_empty() {
            return Err(BackendError::CassetteMiss);
        }
        let mut cursors = self.cursors.lock().unwrap();
        let k = cursors[index].min(entry.responses.len() - 1);
        cursors[index] += 1;
        let reply = continue_after_prefill(&entry.responses[k], request);
        Ok(apply_stop_sequences(&reply, &request.params.stop_sequences))
    }

    fn name(&self) -> &str {
        "cassette"
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BackendKind {
    MockHouse,
    Cassette,
    Anthropic,
    Openai,
}

impl std::str::FromStr for BackendKind {
    type Err = BackendError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "mock-house" | "mock" => Ok(Self::MockHouse),
            "cassette" => Ok(Self::Cassette),
            "anthropic" => Ok(Self::Anthropic),
            "openai" => Ok(Self::Openai),
            other => Err(BackendError::Config(format!("unknown backend {other:?}"))),
        }
    }
}

/// Backend settings, usually read from a TOML file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackendConfig {
    pub backend: BackendKind,
    pub model: String,
    pub temperature: Option<f64>,
    pub top_k: Option<u32>,
    pub max_tokens: u32,
    pub max_retries: u32,
    pub timeout_secs: u64,
    pub cassette: Option<PathBuf>,
    pub api_key_env: Option<String>,
    pub base_url: Option<String>,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            backend: BackendKind::MockHouse,
            model: "claude-3-5-sonnet-20240620".into(),
            temperature: None,
            top_k: None,
            max_tokens: 3000,
            max_retries: 3,
            timeout_secs: 120,
            cassette: None,
            api_key_env: None,
            base_url: None,
        }
    }
}

impl BackendConfig {
    pub fn from_toml(text: &str) -> Result<Self, BackendError> {
        toml::from_str(text).map_err(|e| BackendError::Config(e.to_string()))
    }

    /// Read a TOML file. A relative cassette path is resolved against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self, BackendError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| BackendError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        if let (Some(c), Some(dir)) = (cfg.cassette.as_mut(), path.parent()) {
            if c.is_relative() {
                *c = dir.join(&*c);
            }
        }
        Ok(cfg)
    }

    /// Greedy decoding.
    pub fn deterministic(mut self) -> Self {
        self.temperature = Some(0.0);
        self.top_k = Some(1);
        self
    }

    pub fn is_deterministic(&self) -> bool {
        self.temperature == Some(0.0) && self.top_k == Some(1)
    }

    pub fn decoding(&self) -> DecodingParams {
        DecodingParams {
            temperature: self.temperature,
            top_k: self.top_k,
            max_tokens: self.max_tokens,
            stop_sequences: Vec::new(),
        }
    }
}

pub fn build_backend(cfg: &BackendConfig) -> Result<Arc<dyn Backend>, BackendError> {
    match cfg.backend {
        BackendKind::MockHouse => Ok(Arc::new(FixedBackend::house())),
        BackendKind::Cassette => {
            let path = cfg
                .cassette
                .as_deref()
                .ok_or_else(|| BackendError::Config("cassette backend needs a cassette path".into()))?;
            Ok(Arc::new(CassetteBackend::load(path)?))
        }
        #[cfg(feature = "live")]
        BackendKind::Anthropic => Ok(Arc::new(live::AnthropicBackend::new(cfg)?)),
        #[cfg(feature = "live")]
        BackendKind::Openai => Ok(Arc::new(live::OpenAiBackend::new(cfg)?)),
        #[cfg(not(feature = "live"))]
        BackendKind::Anthropic | BackendKind::Openai => Err(BackendError::Config(
            "live backends need the `live` feature".into(),
        )),
    }
}

#[cfg(feature = "live")]
pub mod live {
    //! HTTP clients for hosted chat APIs.

    use std::time::Duration;

    use serde_json::{json, Value};

    use super::*;

    fn client(cfg: &BackendConfig) -> Result<reqwest::blocking::Client, BackendError> {
        reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(cfg.timeout_secs))
            .build()
            .map_err(|e| BackendError::Config(e.to_string()))
    }

    fn api_key(cfg: &BackendConfig, default_env: &str) -> Result<String, BackendError> {
        let var = cfg.api_key_env.as_deref().unwrap_or(default_env);
        std::env::var(var).map_err(|_| BackendError::Config(format!("environment variable {var} is not set")))
    }

    fn post(
        client: &reqwest::blocking::Client,
        req: reqwest::blocking::RequestBuilder,
        body: &Value,
    ) -> Result<Value, BackendError> {
        let _ = client;
        let resp = req.json(body).send().map_err(|e| {
            if e.is_timeout() {
                BackendError::Timeout
            } else {
                BackendError::Transport(e.to_string())
            }
        })?;
        let code = resp.status().as_u16();
        let text = resp.text().map_err(|e| BackendError::Transport(e.to_string()))?;
        if code >= 400 {
            return Err(BackendError::Status { code, body: text });
        }
        serde_json::from_str(&text).map_err(|e| BackendError::Transport(format!("bad response body: {e}")))
    }

    pub struct AnthropicBackend {
        client: reqwest::blocking::Client,
        key: String,
        model: String,
        url: String,
    }

    impl AnthropicBackend {
        pub fn new(cfg: &BackendConfig) -> Result<Self, BackendError> {
            Ok(Self {
                client: client(cfg)?,
                key: api_key(cfg, "ANTHROPIC_API_KEY")?,
                model: cfg.model.clone(),
                url: cfg
                    .base_url
                    .clone()
                    .unwrap_or_else(|| "https://api.anthropic.com/v1/messages".into()),
            })
        }

        fn body(&self, request: &ChatRequest) -> Value {
            let messages: Vec<Value> = request
                .messages
                .iter()
                .map(|m| {
                    let role = if m.role == Role::Assistant { "assistant" } else { "user" };
                    let mut content = Vec::new();
                    if let Some(img) = &m.image {
                        content.push(json!({
                            "type": "image",
                            "source": {"type": "base64", "media_type": img.media_type, "data": img.base64()},
                        }));
                    }
                    let text = if m.role == Role::Assistant { m.text.trim_end() } else { m.text.as_str() };
                    content.push(json!({"type": "text", "text": text}));
                    json!({"role": role, "content": content})
                })
                .collect();
            let mut body = json!({
                "model": self.model,
                "max_tokens": request.params.max_tokens,
                "messages": messages,
            });
            if let Some(t) = request.params.temperature {
                body["temperature"] = json!(t);
            }
            if let Some(k) = request.params.top_k {
                body["top_k"] = json!(k);
            }
            if let Some(s) = &request.system {
                body["system"] = json!(s);
            }
            if !request.params.stop_sequences.is_empty() {
                body["stop_sequences"] = json!(request.params.stop_sequences);
            }
            body
        }
    }

    impl Backend for AnthropicBackend {
        fn send(&self, request: &ChatRequest) -> Result<String, BackendError> {
            let req = self
                .client
                .post(&self.url)
                .header("x-api-key", &self.key)
                .header("anthropic-version", "2023-06-01");
            let v = post(&self.client, req, &self.body(request))?;
            let text = v["content"]
                .as_array()
                .map(|parts| {
                    parts
                        .iter()
                        .filter_map(|p| p["text"].as_str())
                        .collect::<String>()
                })
                .ok_or_else(|| BackendError::Transport("response has no content".into()))?;
            Ok(text)
        }

        fn name(&self) -> &str {
            "anthropic"
        }
    }

    pub struct OpenAiBackend {
        client: reqwest::blocking::Client,
        key: String,
        model: String,
        url: String,
    }

    impl OpenAiBackend {
        pub fn new(cfg: &BackendConfig) -> Result<Self, BackendError> {
            Ok(Self {
                client: client(cfg)?,
                key: api_key(cfg, "OPENAI_API_KEY")?,
                model: cfg.model.clone(),
                url: cfg
                    .base_url
                    .clone()
                    .unwrap_or_else(|| "https://api.openai.com/v1/chat/completions".into()),
            })
        }

        fn body(&self, request: &ChatRequest) -> Value {
            let mut messages = Vec::new();
            if let Some(s) = &request.system {
                messages.push(json!({"role": "system", "content": s}));
            }
            for m in &request.messages {
                match (&m.role, &m.image) {
                    (Role::User, Some(img)) => messages.push(json!({
                        "role": "user",
                        "content": [
                            {"type": "image_url", "image_url": {"url": format!("data:{};base64,{}", img.media_type, img.base64())}},
                            {"type": "text", "text": m.text},
                        ],
                    })),
                    (Role::Assistant, _) => messages.push(json!({"role": "assistant", "content": m.text})),
                    _ => messages.push(json!({"role": "user", "content": m.text})),
                }
            }
            // No top_k on this API; temperature 0 is as greedy as it gets.
            let mut body = json!({
                "model": self.model,
                "max_tokens": request.params.max_tokens,
                "messages": messages,
            });
            if let Some(t) = request.params.temperature {
                body["temperature"] = json!(t);
            }
            if !request.params.stop_sequences.is_empty() {
                body["stop"] = json!(request.params.stop_sequences);
            }
            body
        }
    }

    impl Backend for OpenAiBackend {
        fn send(&self, request: &ChatRequest) -> Result<String, BackendError> {
            let req = self.client.post(&self.url).bearer_auth(&self.key);
            let v = post(&self.client, req, &self.body(request))?;
            let text = v["choices"][0]["message"]["content"]
                .as_str()
                .ok_or_else(|| BackendError::Transport("response has no message content".into()))?;
            // The chat endpoint does not continue an assistant prefill, so
            // drop a repeated prefill if the model wrote one.
            Ok(continue_after_prefill(text, request))
        }

        fn name(&self) -> &str {
            "openai"
        }
    }
}

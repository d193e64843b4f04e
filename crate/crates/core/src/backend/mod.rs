//! "Send a history, get assistant text back", over a live OpenAI-compatible
//! HTTP endpoint or a deterministic script.

use std::borrow::Cow;
use std::time::Duration;

use async_trait::async_trait;

use crate::agent::format_fallback_feedback;
use crate::extract::extract_tool_invocation;
use crate::schema::{ChatMessage, Role};

mod http;
mod scripted;
pub mod stub;
pub mod wire;

pub use http::HttpBackend;
pub use scripted::{
    invocation_reply, scripted_tool_flow, FixtureError, Matcher, Reply, ScriptMode, ScriptStep, ScriptedBackend,
    TaskFixture, OBSERVATION_PLACEHOLDER,
};

pub const DEFAULT_TEMPERATURE: f64 = 0.0;
pub const DEFAULT_MAX_TOKENS: u32 = 2048;
pub const DEFAULT_REQUEST_TIMEOUT: Duration = Duration::from_secs(120);

pub const ENV_BASE_URL: &str = "TOOLSHIM_BASE_URL";
pub const ENV_API_KEY: &str = "TOOLSHIM_API_KEY";
pub const ENV_MODEL: &str = "TOOLSHIM_MODEL";

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum BackendError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("backend returned HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("malformed backend response: {0}")]
    Malformed(String),
    #[error("backend request timed out")]
    Timeout,
    #[error("script exhausted after {0} response(s)")]
    ScriptExhausted(usize),
    #[error("no script step matches the current history")]
    NoMatch,
    #[error("history is empty")]
    EmptyHistory,
    #[error("invalid backend config: {0}")]
    InvalidConfig(String),
}

impl BackendError {
    /// Upstream HTTP status, when there was one.
    pub fn status(&self) -> Option<u16> {
        match self {
            BackendError::Status { status, .. } => Some(*status),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BackendConfig {
    pub base_url: String,
    pub model_id: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub api_key: Option<String>,
    pub observation_role_supported: bool,
    pub request_timeout: Duration,
}

impl BackendConfig {
    pub fn new(base_url: impl Into<String>, model_id: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            model_id: model_id.into(),
            temperature: DEFAULT_TEMPERATURE,
            max_tokens: DEFAULT_MAX_TOKENS,
            api_key: None,
            observation_role_supported: true,
            request_timeout: DEFAULT_REQUEST_TIMEOUT,
        }
    }

    /// Reads `TOOLSHIM_BASE_URL`, `TOOLSHIM_MODEL` and `TOOLSHIM_API_KEY`.
    pub fn from_env() -> Option<Self> {
        let base_url = std::env::var(ENV_BASE_URL).ok()?;
        let model = std::env::var(ENV_MODEL).unwrap_or_else(|_| "default".into());
        let mut config = Self::new(base_url, model);
        config.api_key = std::env::var(ENV_API_KEY).ok().filter(|k| !k.is_empty());
        Some(config)
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(BackendError::InvalidConfig(format!(
                "temperature {} is outside [0, 2]",
                self.temperature
            )));
        }
        if self.max_tokens == 0 {
            return Err(BackendError::InvalidConfig("max_tokens must be at least 1".into()));
        }
        if self.base_url.is_empty() {
            return Err(BackendError::InvalidConfig("base_url is empty".into()));
        }
        Ok(())
    }
}

#[async_trait]
pub trait ChatBackend: Send + Sync {
    /// Returns the assistant's reply to `history`.
    async fn complete(&self, history: &[ChatMessage]) -> Result<String, BackendError>;
}

#[async_trait]
impl<B: ChatBackend + ?Sized> ChatBackend for std::sync::Arc<B> {
    async fn complete(&self, history: &[ChatMessage]) -> Result<String, BackendError> {
        (**self).complete(history).await
    }
}

/// Rewrites `observation` turns into the user-role fallback message when the
/// backend cannot accept the observation role. The message count never
/// changes. The tool name comes from the preceding assistant turn, which
/// holds the reconstructed invocation text.
pub fn prepare_history(history: &[ChatMessage], observation_role_supported: bool) -> Cow<'_, [ChatMessage]> {
    if observation_role_supported || !history.iter().any(|m| m.role == Role::Observation) {
        return Cow::Borrowed(history);
    }
    let rewritten = history
        .iter()
        .enumerate()
        .map(|(i, msg)| {
            if msg.role != Role::Observation {
                return msg.clone();
            }
            let tool = i
                .checked_sub(1)
                .map(|p| &history[p])
                .filter(|prev| prev.role == Role::Assistant)
                .and_then(|prev| extract_tool_invocation(&prev.content))
                .map(|inv| inv.tool)
                .unwrap_or_else(|| "tool".to_string());
            ChatMessage::user(format_fallback_feedback(&tool, &msg.content))
        })
        .collect();
    Cow::Owned(rewritten)
}

use std::time::Duration;

use async_trait::async_trait;
use serde_json::Value;

use super::{prepare_history, wire, BackendConfig, BackendError, ChatBackend};
use crate::schema::ChatMessage;

const MAX_RETRIES: u32 = 2;
const BACKOFF_BASE: Duration = Duration::from_millis(200);
const BODY_EXCERPT: usize = 512;

/// Client for `POST <base_url>/chat/completions`.
#[derive(Debug, Clone)]
pub struct HttpBackend {
    config: BackendConfig,
    client: reqwest::Client,
}

impl HttpBackend {
    pub fn new(config: BackendConfig) -> Result<Self, BackendError> {
        config.validate()?;
        let client = reqwest::Client::builder()
            .timeout(config.request_timeout)
            .build()
            .map_err(|e| BackendError::InvalidConfig(e.to_string()))?;
        Ok(Self { config, client })
    }

    pub fn config(&self) -> &BackendConfig {
        &self.config
    }

    fn endpoint(&self) -> String {
        format!("{}/chat/completions", self.config.base_url.trim_end_matches('/'))
    }

    async fn send_once(&self, body: &Value) -> Result<String, BackendError> {
        let mut request = self.client.post(self.endpoint()).json(body);
        if let Some(key) = &self.config.api_key {
            request = request.bearer_auth(key);
        }
        let response = request.send().await.map_err(classify)?;
        let status = response.status();
        let text = response.text().await.map_err(classify)?;
        if !status.is_success() {
            return Err(BackendError::Status {
                status: status.as_u16(),
                body: excerpt(&text),
            });
        }
        let parsed: Value =
            serde_json::from_str(&text).map_err(|e| BackendError::Malformed(format!("{e}: {}", excerpt(&text))))?;
        wire::response_content(&parsed)
            .map(str::to_string)
            .ok_or_else(|| BackendError::Malformed(format!("no choices[0].message.content in {}", excerpt(&text))))
    }
}

#[async_trait]
impl ChatBackend for HttpBackend {
    async fn complete(&self, history: &[ChatMessage]) -> Result<String, BackendError> {
        if history.is_empty() {
            return Err(BackendError::EmptyHistory);
        }
        let history = prepare_history(history, self.config.observation_role_supported);
        let body = wire::request_body(
            &self.config.model_id,
            &history,
            self.config.temperature,
            self.config.max_tokens,
        );
        let mut attempt = 0;
        loop {
            match self.send_once(&body).await {
                Err(BackendError::Transport(msg)) if attempt < MAX_RETRIES => {
                    let delay = BACKOFF_BASE * 2u32.pow(attempt);
                    tracing::warn!(attempt, ?delay, "transport error, retrying: {msg}");
                    tokio::time::sleep(delay).await;
                    attempt += 1;
                }
                other => return other,
            }
        }
    }
}

fn classify(err: reqwest::Error) -> BackendError {
    if err.is_timeout() {
        BackendError::Timeout
    } else {
        BackendError::Transport(err.to_string())
    }
}

fn excerpt(text: &str) -> String {
    match text.char_indices().nth(BODY_EXCERPT) {
        Some((cut, _)) => format!("{}…", &text[..cut]),
        None => text.to_string(),
    }
}

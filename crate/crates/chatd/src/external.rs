//! Client for a chat-completions style endpoint.

use std::fmt;
use std::time::Duration;

use serde::{Deserialize, Serialize};

pub const ENV_BASE_URL: &str = "BIOMECH_EXTERNAL_BASE_URL";
pub const ENV_API_KEY: &str = "BIOMECH_EXTERNAL_API_KEY";
pub const ENV_MODEL: &str = "BIOMECH_EXTERNAL_MODEL";
pub const DEFAULT_MODEL: &str = "biomechgpt";

#[derive(Clone, PartialEq)]
pub struct ExternalConfig {
    pub base_url: String,
    pub api_key: Option<String>,
    pub model: String,
    pub timeout: Duration,
    pub max_retries: u32,
    /// First retry delay; doubles on each further retry.
    pub backoff_base: Duration,
}

impl fmt::Debug for ExternalConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ExternalConfig")
            .field("base_url", &self.base_url)
            .field("api_key", &self.api_key.as_ref().map(|_| "<redacted>"))
            .field("model", &self.model)
            .field("timeout", &self.timeout)
            .field("max_retries", &self.max_retries)
            .field("backoff_base", &self.backoff_base)
            .finish()
    }
}

impl ExternalConfig {
    pub fn new(base_url: impl Into<String>) -> Self {
        ExternalConfig {
            base_url: base_url.into(),
            api_key: None,
            model: DEFAULT_MODEL.to_string(),
            timeout: Duration::from_secs(30),
            max_retries: 2,
            backoff_base: Duration::from_millis(500),
        }
    }

    pub fn from_env() -> Result<Self, ExternalError> {
        let base = std::env::var(ENV_BASE_URL)
            .ok()
            .filter(|s| !s.trim().is_empty())
            .ok_or_else(|| ExternalError::Config(format!("{ENV_BASE_URL} is not set")))?;
        let mut c = ExternalConfig::new(base);
        c.api_key = std::env::var(ENV_API_KEY).ok().filter(|s| !s.is_empty());
        if let Ok(m) = std::env::var(ENV_MODEL) {
            if !m.is_empty() {
                c.model = m;
            }
        }
        Ok(c)
    }

    pub fn endpoint(&self) -> String {
        format!(
            "{}/v1/chat/completions",
            self.base_url.trim_end_matches('/')
        )
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ExternalError {
    #[error("external backend misconfigured: {0}")]
    Config(String),
    #[error("upstream returned status {status}")]
    Status { status: u16 },
    #[error("upstream timed out")]
    Timeout,
    #[error("upstream transport error: {0}")]
    Transport(String),
    #[error("upstream response malformed: {0}")]
    Malformed(String),
}

#[derive(Debug, Serialize)]
struct Message<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Debug, Serialize)]
struct CompletionRequest<'a> {
    model: &'a str,
    messages: [Message<'a>; 1],
}

/// Compact JSON body carrying the formatted prompt as one user message.
pub fn request_body(model: &str, formatted_prompt: &str) -> String {
    serde_json::to_string(&CompletionRequest {
        model,
        messages: [Message {
            role: "user",
            content: formatted_prompt,
        }],
    })
    .expect("request serializes")
}

#[derive(Debug, Deserialize)]
struct CompletionResponse {
    choices: Vec<Choice>,
}

#[derive(Debug, Deserialize)]
struct Choice {
    message: ChoiceMessage,
}

#[derive(Debug, Deserialize)]
struct ChoiceMessage {
    content: String,
}

pub fn extract_reply(body: &str) -> Result<String, ExternalError> {
    let r: CompletionResponse =
        serde_json::from_str(body).map_err(|e| ExternalError::Malformed(e.to_string()))?;
    r.choices
        .into_iter()
        .next()
        .map(|c| c.message.content)
        .ok_or_else(|| ExternalError::Malformed("no choices".into()))
}

#[derive(Debug, Clone)]
pub struct ExternalClient {
    config: ExternalConfig,
    http: reqwest::Client,
}

impl ExternalClient {
    pub fn new(config: ExternalConfig) -> Result<Self, ExternalError> {
        let http = reqwest::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| ExternalError::Config(e.to_string()))?;
        Ok(ExternalClient { config, http })
    }

    pub fn config(&self) -> &ExternalConfig {
        &self.config
    }

    async fn attempt(&self, body: &str) -> Result<String, (ExternalError, bool)> {
        let mut req = self
            .http
            .post(self.config.endpoint())
            .header(reqwest::header::CONTENT_TYPE, "application/json")
            .body(body.to_string());
        if let Some(k) = &self.config.api_key {
            req = req.bearer_auth(k);
        }
        let resp = match req.send().await {
            Ok(r) => r,
            Err(e) if e.is_timeout() => return Err((ExternalError::Timeout, false)),
            Err(e) => return Err((ExternalError::Transport(e.to_string()), true)),
        };
        let status = resp.status();
        if !status.is_success() {
            let retry = status.is_server_error();
            return Err((
                ExternalError::Status {
                    status: status.as_u16(),
                },
                retry,
            ));
        }
        let text = resp
            .text()
            .await
            .map_err(|e| (ExternalError::Transport(e.to_string()), true))?;
        extract_reply(&text).map_err(|e| (e, false))
    }

    /// Sends the prompt, retrying transport errors and 5xx responses.
    pub async fn complete(&self, formatted_prompt: &str) -> Result<String, ExternalError> {
        let body = request_body(&self.config.model, formatted_prompt);
        let mut delay = self.config.backoff_base;
        let mut tries = 0;
        loop {
            match self.attempt(&body).await {
                Ok(reply) => return Ok(reply),
                Err((e, retry)) if retry && tries < self.config.max_retries => {
                    log::warn!("external backend: {e}; retrying in {delay:?}");
                    tokio::time::sleep(delay).await;
                    delay *= 2;
                    tries += 1;
                }
                Err((e, _)) => return Err(e),
            }
        }
    }
}

use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{ChatBackend, ChatRequest, LlmError};

pub const ENV_BASE_URL: &str = "E2CFD_LLM_BASE_URL";
pub const ENV_API_KEY: &str = "E2CFD_LLM_API_KEY";
pub const ENV_MODEL: &str = "E2CFD_LLM_MODEL";

/// Where and how to reach an OpenAI-compatible chat endpoint. The API key is
/// never written to disk; it comes from `E2CFD_LLM_API_KEY`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LlmEndpointConfig {
    pub base_url: String,
    pub model: String,
    pub temperature: f64,
    pub timeout_s: f64,
    pub max_retries: u32,
    pub backoff_base_ms: u64,
    #[serde(skip)]
    pub api_key: Option<String>,
}

impl Default for LlmEndpointConfig {
    fn default() -> Self {
        LlmEndpointConfig {
            base_url: String::new(),
            model: "gpt-4o-mini".into(),
            temperature: 0.7,
            timeout_s: 60.0,
            max_retries: 3,
            backoff_base_ms: 500,
            api_key: None,
        }
    }
}

impl LlmEndpointConfig {
    /// Fills the URL, model and key from the environment. Variables that
    /// are set win over the file values.
    pub fn with_env(mut self) -> Self {
        if let Ok(v) = std::env::var(ENV_BASE_URL) {
            self.base_url = v;
        }
        if let Ok(v) = std::env::var(ENV_MODEL) {
            self.model = v;
        }
        self.api_key = std::env::var(ENV_API_KEY).ok().or(self.api_key);
        self
    }

    pub fn validate(&self) -> Result<(), LlmError> {
        if self.base_url.trim().is_empty() {
            return Err(LlmError::Config(format!("no endpoint URL (set {ENV_BASE_URL})")));
        }
        if !(self.timeout_s > 0.0 && self.timeout_s.is_finite()) {
            return Err(LlmError::Config("timeout_s must be > 0".into()));
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(LlmError::Config("temperature must lie in [0, 2]".into()));
        }
        Ok(())
    }

    pub fn completions_url(&self) -> String {
        let base = self.base_url.trim_end_matches('/');
        if base.ends_with("/v1") {
            format!("{base}/chat/completions")
        } else {
            format!("{base}/v1/chat/completions")
        }
    }
}

/// Blocking chat-completions client with exponential backoff on 429 and 5xx.
pub struct HttpChatClient {
    config: LlmEndpointConfig,
    agent: ureq::Agent,
}

impl HttpChatClient {
    pub fn new(config: LlmEndpointConfig) -> Result<Self, LlmError> {
        config.validate()?;
        let agent = ureq::AgentBuilder::new()
            .timeout(Duration::from_secs_f64(config.timeout_s))
            .build();
        Ok(HttpChatClient { config, agent })
    }

    fn body(&self, request: &ChatRequest) -> Value {
        json!({
            "model": self.config.model,
            "temperature": self.config.temperature,
            "messages": [
                {"role": "system", "content": request.system},
                {"role": "user", "content": request.user},
            ],
        })
    }
}

fn is_timeout(t: &ureq::Transport) -> bool {
    let mut src: Option<&(dyn std::error::Error + 'static)> = std::error::Error::source(t);
    while let Some(e) = src {
        if let Some(io) = e.downcast_ref::<std::io::Error>() {
            if matches!(io.kind(), std::io::ErrorKind::TimedOut | std::io::ErrorKind::WouldBlock) {
                return true;
            }
        }
        src = e.source();
    }
    t.to_string().contains("timed out")
}

/// Pulls `choices[0].message.content` out of a response body.
pub fn parse_completion(body: &str) -> Result<String, LlmError> {
    let v: Value = serde_json::from_str(body).map_err(|e| LlmError::Protocol(format!("body is not JSON: {e}")))?;
    v.pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .map(str::to_string)
        .ok_or_else(|| LlmError::Protocol("missing choices[0].message.content".into()))
}

impl ChatBackend for HttpChatClient {
    fn chat(&self, request: &ChatRequest) -> Result<String, LlmError> {
        let url = self.config.completions_url();
        let body = self.body(request);
        let mut last = String::new();
        for attempt in 0..=self.config.max_retries {
            if attempt > 0 {
                let wait = self.config.backoff_base_ms.saturating_mul(1 << (attempt - 1).min(16));
                std::thread::sleep(Duration::from_millis(wait));
            }
            let mut req = self.agent.post(&url).set("Content-Type", "application/json");
            if let Some(key) = &self.config.api_key {
                req = req.set("Authorization", &format!("Bearer {key}"));
            }
            match req.send_json(body.clone()) {
                Ok(resp) => {
                    let text = resp
                        .into_string()
                        .map_err(|e| LlmError::Protocol(format!("unreadable body: {e}")))?;
                    return parse_completion(&text);
                }
                Err(ureq::Error::Status(code @ (401 | 403), _)) => return Err(LlmError::Auth(code)),
                Err(ureq::Error::Status(code, _)) if code == 429 || code >= 500 => {
                    last = format!("HTTP {code}");
                }
                Err(ureq::Error::Status(code, resp)) => {
                    let text = resp.into_string().unwrap_or_default();
                    return Err(LlmError::Http { status: code, body: text });
                }
                Err(ureq::Error::Transport(t)) if is_timeout(&t) => return Err(LlmError::Timeout(self.config.timeout_s)),
                Err(ureq::Error::Transport(t)) => last = t.to_string(),
            }
        }
        Err(LlmError::RetryExhausted {
            attempts: self.config.max_retries + 1,
            last,
        })
    }
}

use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{Error, Result};

pub const ENV_BASE_URL: &str = "CSC_LLM_BASE_URL";
pub const ENV_API_KEY: &str = "CSC_LLM_API_KEY";
pub const ENV_MODEL: &str = "CSC_LLM_MODEL";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EndpointConfig {
    /// Base URL; requests go to `{base_url}/chat/completions`.
    pub base_url: String,
    /// Never written back out; read from the environment.
    #[serde(skip_serializing)]
    pub api_key: Option<String>,
    pub model: String,
    pub timeout_secs: u64,
    /// Extra attempts after the first on transient failures.
    pub retries: u32,
    /// First backoff delay; doubled after each failed attempt.
    pub backoff_ms: u64,
    pub concurrency: usize,
    pub temperature: f64,
}

impl Default for EndpointConfig {
    fn default() -> Self {
        Self {
            base_url: String::new(),
            api_key: None,
            model: String::new(),
            timeout_secs: 60,
            retries: 3,
            backoff_ms: 500,
            concurrency: 4,
            temperature: 0.0,
        }
    }
}

impl EndpointConfig {
    /// Fill the URL, key and model from the environment where set.
    pub fn with_env(mut self) -> Self {
        if let Ok(v) = std::env::var(ENV_BASE_URL) {
            self.base_url = v;
        }
        if let Ok(v) = std::env::var(ENV_API_KEY) {
            self.api_key = Some(v);
        }
        if let Ok(v) = std::env::var(ENV_MODEL) {
            self.model = v;
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.base_url.is_empty() {
            return Err(Error::Config(format!("no endpoint: set base_url or {ENV_BASE_URL}")));
        }
        if self.model.is_empty() {
            return Err(Error::Config(format!("no model: set model or {ENV_MODEL}")));
        }
        if self.concurrency == 0 {
            return Err(Error::Config("concurrency must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FailureKind {
    /// Network error or timeout.
    Transport,
    /// Non-success HTTP status.
    Http,
    /// Reply did not follow the chat-completions shape.
    Malformed,
    /// Reply length differs from the source.
    LengthMismatch,
}

impl FailureKind {
    /// Failures that mean no answer arrived at all.
    pub fn is_transport(self) -> bool {
        matches!(
            self,
            FailureKind::Transport | FailureKind::Http | FailureKind::Malformed
        )
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Failure {
    pub kind: FailureKind,
    pub message: String,
}

/// A chat endpoint that answers one prompt.
pub trait ChatBackend: Sync {
    /// One attempt. `Err((failure, transient))`; transient failures are retried.
    fn chat_once(&self, prompt: &str) -> std::result::Result<String, (Failure, bool)>;
}

/// HTTP client for the chat-completions wire format.
pub struct ChatClient {
    agent: ureq::Agent,
    cfg: EndpointConfig,
}

impl ChatClient {
    pub fn new(cfg: EndpointConfig) -> Result<Self> {
        cfg.validate()?;
        let agent = ureq::AgentBuilder::new()
            .timeout(Duration::from_secs(cfg.timeout_secs))
            .build();
        Ok(Self { agent, cfg })
    }

    pub fn config(&self) -> &EndpointConfig {
        &self.cfg
    }
}

impl ChatBackend for ChatClient {
    fn chat_once(&self, prompt: &str) -> std::result::Result<String, (Failure, bool)> {
        let url = format!("{}/chat/completions", self.cfg.base_url.trim_end_matches('/'));
        let mut req = self.agent.post(&url).set("Content-Type", "application/json");
        if let Some(key) = &self.cfg.api_key {
            req = req.set("Authorization", &format!("Bearer {key}"));
        }
        let body = json!({
            "model": self.cfg.model,
            "temperature": self.cfg.temperature,
            "messages": [{"role": "user", "content": prompt}],
        });
        let fail = |kind, message: String, transient| Err((Failure { kind, message }, transient));
        match req.send_json(body) {
            Ok(resp) => match resp.into_json::<serde_json::Value>() {
                Ok(v) => match v["choices"][0]["message"]["content"].as_str() {
                    Some(s) => Ok(s.to_string()),
                    None => fail(
                        FailureKind::Malformed,
                        "reply has no choices[0].message.content".into(),
                        false,
                    ),
                },
                Err(e) => fail(FailureKind::Malformed, format!("reply is not JSON: {e}"), false),
            },
            Err(ureq::Error::Status(code, resp)) => {
                let text = resp.into_string().unwrap_or_default();
                let transient = code == 429 || code >= 500;
                fail(
                    FailureKind::Http,
                    format!("HTTP {code}: {}", truncate(&text, 200)),
                    transient,
                )
            }
            Err(ureq::Error::Transport(t)) => fail(FailureKind::Transport, t.to_string(), true),
        }
    }
}

fn truncate(s: &str, n: usize) -> String {
    s.chars().take(n).collect()
}

/// Call `backend` with exponential backoff on transient failures. Returns
/// the final result and the number of attempts made.
pub fn chat_with_retries<B: ChatBackend + ?Sized>(
    backend: &B,
    prompt: &str,
    retries: u32,
    backoff_ms: u64,
) -> (std::result::Result<String, Failure>, u32) {
    let mut delay = backoff_ms;
    let mut attempt = 0;
    loop {
        attempt += 1;
        match backend.chat_once(prompt) {
            Ok(s) => return (Ok(s), attempt),
            Err((f, transient)) => {
                if !transient || attempt > retries {
                    return (Err(f), attempt);
                }
                thread::sleep(Duration::from_millis(delay));
                delay = delay.saturating_mul(2);
            }
        }
    }
}

/// Trim whitespace and any surrounding quote marks.
pub fn clean_response(s: &str) -> String {
    const QUOTES: &[char] = &['"', '\'', '`', '“', '”', '‘', '’', '「', '」', '『', '』'];
    let mut t = s.trim();
    loop {
        let stripped = t.trim_matches(QUOTES).trim();
        if stripped == t {
            return t.to_string();
        }
        t = stripped;
    }
}

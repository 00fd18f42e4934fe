//! Chat-completion transports.

use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::template::Variables;

#[derive(Debug, Clone, Serialize)]
pub struct LlmRequest {
    pub template_id: String,
    pub template_version: u32,
    pub rendered_text: String,
    pub temperature: f64,
    pub max_tokens: u32,
    /// 0 for the first attempt, then one per schema-repair retry.
    pub attempt: u32,
    /// The values the prompt was rendered from. Never sent over the wire;
    /// scripted providers use them to pick a response.
    #[serde(skip)]
    pub variables: Variables,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmResponse {
    pub raw_text: String,
    pub parsed: Value,
    pub provider_meta: Value,
}

#[derive(Debug, Clone)]
pub struct ChatReply {
    pub raw_text: String,
    pub meta: Value,
}

pub trait ChatProvider: Send + Sync {
    fn name(&self) -> &str;
    fn complete(&self, request: &LlmRequest) -> Result<ChatReply, String>;
}

/// OpenAI-compatible `/chat/completions` endpoint.
pub struct HttpChatProvider {
    client: reqwest::blocking::Client,
    endpoint: String,
    api_key: Option<String>,
    model: String,
}

pub const ENV_ENDPOINT: &str = "ARCMEM_LLM_ENDPOINT";
pub const ENV_API_KEY: &str = "ARCMEM_LLM_API_KEY";
pub const ENV_MODEL: &str = "ARCMEM_LLM_MODEL";

impl HttpChatProvider {
    pub fn new(endpoint: String, api_key: Option<String>, model: String) -> Self {
        Self {
            client: reqwest::blocking::Client::builder()
                .timeout(std::time::Duration::from_secs(180))
                .build()
                .expect("http client"),
            endpoint,
            api_key,
            model,
        }
    }

    /// Reads the endpoint, key and model from the environment. Returns
    /// `None` when no endpoint is configured.
    pub fn from_env() -> Option<Self> {
        let endpoint = std::env::var(ENV_ENDPOINT).ok()?;
        let model = std::env::var(ENV_MODEL).unwrap_or_else(|_| "gpt-4o-mini".to_string());
        Some(Self::new(endpoint, std::env::var(ENV_API_KEY).ok(), model))
    }
}

impl ChatProvider for HttpChatProvider {
    fn name(&self) -> &str {
        &self.model
    }

    fn complete(&self, request: &LlmRequest) -> Result<ChatReply, String> {
        let body = serde_json::json!({
            "model": self.model,
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
            "response_format": {"type": "json_object"},
            "messages": [{"role": "user", "content": request.rendered_text}],
        });
        let mut req = self.client.post(&self.endpoint).json(&body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req
            .send()
            .and_then(|r| r.error_for_status())
            .map_err(|e| e.to_string())?;
        let v: Value = resp.json().map_err(|e| e.to_string())?;
        let raw_text = v
            .pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .ok_or("response has no choices[0].message.content")?
            .to_string();
        let meta = serde_json::json!({
            "provider": "http",
            "model": v.get("model").cloned().unwrap_or(Value::Null),
            "usage": v.get("usage").cloned().unwrap_or(Value::Null),
        });
        Ok(ChatReply { raw_text, meta })
    }
}

type Script = dyn Fn(&LlmRequest) -> Result<String, String> + Send + Sync;

/// Answers requests with a caller-supplied function. Used for tests and for
/// authoring fixtures.
pub struct ScriptedProvider {
    script: Box<Script>,
    calls: AtomicUsize,
}

impl ScriptedProvider {
    pub fn new(script: impl Fn(&LlmRequest) -> Result<String, String> + Send + Sync + 'static) -> Self {
        Self {
            script: Box::new(script),
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl ChatProvider for ScriptedProvider {
    fn name(&self) -> &str {
        "scripted"
    }

    fn complete(&self, request: &LlmRequest) -> Result<ChatReply, String> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let raw_text = (self.script)(request)?;
        Ok(ChatReply {
            raw_text,
            meta: serde_json::json!({"provider": "scripted"}),
        })
    }
}

/// Fails every call. Stands in for the network where none may be used.
pub struct UnreachableProvider {
    calls: AtomicUsize,
}

impl UnreachableProvider {
    pub fn new() -> Self {
        Self {
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl Default for UnreachableProvider {
    fn default() -> Self {
        Self::new()
    }
}

impl ChatProvider for UnreachableProvider {
    fn name(&self) -> &str {
        "unreachable"
    }

    fn complete(&self, _request: &LlmRequest) -> Result<ChatReply, String> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        Err("network access is not allowed here".into())
    }
}

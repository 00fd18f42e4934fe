//! LLM gateway: prompt rendering, structured completion with schema
//! validation and repair retries, and record/replay of responses.

pub mod catalog;
pub mod embed;
pub mod fixtures;
pub mod narrator;
pub mod provider;
pub mod schema;
pub mod template;

use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use catalog::{ids, PromptCatalog};
pub use embed::{
    embed_texts, EmbedError, EmbeddingProvider, HashedNgramEmbedder, HttpEmbeddingProvider,
    DEFAULT_EMBEDDING_DIMENSION,
};
pub use fixtures::{Fixture, FixtureStore};
pub use provider::{
    ChatProvider, ChatReply, HttpChatProvider, LlmRequest, LlmResponse, ScriptedProvider,
    UnreachableProvider,
};
pub use template::{vars, PromptTemplate, Variables};

/// Schema-repair retries after the first attempt.
pub const DEFAULT_MAX_RETRIES: u32 = 2;
pub const DEFAULT_MAX_TOKENS: u32 = 2048;

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("unknown template {0:?}")]
    UnknownTemplate(String),
    #[error("template {template_id}: missing variable {name:?}")]
    MissingVariable { template_id: String, name: String },
    #[error("template {template_id}: variable {name:?} is not used")]
    UnusedVariable { template_id: String, name: String },
    #[error("no replay fixture for {template_id} request {fingerprint}")]
    ReplayMiss {
        template_id: String,
        fingerprint: String,
    },
    #[error("{template_id}: response violates schema after {attempts} attempt(s): {}", .errors.join("; "))]
    SchemaViolation {
        template_id: String,
        attempts: u32,
        errors: Vec<String>,
    },
    #[error("provider transport error: {0}")]
    Transport(String),
    #[error("no chat provider configured for live calls")]
    Unavailable,
    #[error("fixture store: {0}")]
    Fixture(String),
}

impl GatewayError {
    pub fn code(&self) -> &'static str {
        match self {
            GatewayError::UnknownTemplate(_) => "UNKNOWN_TEMPLATE",
            GatewayError::MissingVariable { .. } => "MISSING_VARIABLE",
            GatewayError::UnusedVariable { .. } => "UNUSED_VARIABLE",
            GatewayError::ReplayMiss { .. } => "REPLAY_MISS",
            GatewayError::SchemaViolation { .. } => "SCHEMA_VIOLATION",
            GatewayError::Transport(_) => "TRANSPORT",
            GatewayError::Unavailable => "GATEWAY_UNAVAILABLE",
            GatewayError::Fixture(_) => "FIXTURE_IO",
        }
    }

    /// Errors that mean "the model could not be reached", as opposed to a
    /// bad request or a bad answer.
    pub fn is_unavailable(&self) -> bool {
        matches!(
            self,
            GatewayError::ReplayMiss { .. } | GatewayError::Transport(_) | GatewayError::Unavailable
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GatewayMode {
    Live,
    Replay,
    Record,
}

impl GatewayMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            GatewayMode::Live => "live",
            GatewayMode::Replay => "replay",
            GatewayMode::Record => "record",
        }
    }
}

impl fmt::Display for GatewayMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for GatewayMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "live" => Ok(GatewayMode::Live),
            "replay" => Ok(GatewayMode::Replay),
            "record" => Ok(GatewayMode::Record),
            other => Err(format!("unknown gateway mode {other:?}")),
        }
    }
}

/// `sha256(template_id \0 version \0 rendered_text)`, hex encoded.
pub fn fingerprint(template_id: &str, version: u32, rendered_text: &str) -> String {
    let mut h = Sha256::new();
    h.update(template_id.as_bytes());
    h.update([0]);
    h.update(version.to_string().as_bytes());
    h.update([0]);
    h.update(rendered_text.as_bytes());
    hex::encode(h.finalize())
}

/// Pulls a JSON value out of a model reply, tolerating code fences and
/// surrounding prose.
pub fn extract_json(raw: &str) -> Result<Value, String> {
    let trimmed = raw.trim();
    if let Ok(v) = serde_json::from_str(trimmed) {
        return Ok(v);
    }
    let start = trimmed.find('{').ok_or("reply contains no JSON object")?;
    let end = trimmed.rfind('}').ok_or("reply contains no JSON object")?;
    if end < start {
        return Err("reply contains no JSON object".into());
    }
    serde_json::from_str(&trimmed[start..=end]).map_err(|e| format!("reply is not valid JSON: {e}"))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Completion {
    pub value: Value,
    pub fingerprint: String,
    /// Schema-repair retries used (0 when the first answer was valid).
    pub retries: u32,
    pub replayed: bool,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GatewayStats {
    pub requests: u64,
    pub replay_hits: u64,
    pub provider_calls: u64,
    pub retries: u64,
}

#[derive(Default)]
struct Counters {
    requests: AtomicU64,
    replay_hits: AtomicU64,
    provider_calls: AtomicU64,
    retries: AtomicU64,
}

/// Shareable across threads; concurrent completions are allowed.
pub struct Gateway {
    mode: GatewayMode,
    catalog: Arc<PromptCatalog>,
    provider: Option<Arc<dyn ChatProvider>>,
    fixtures: FixtureStore,
    max_retries: u32,
    max_tokens: u32,
    counters: Counters,
}

impl Gateway {
    pub fn new(
        mode: GatewayMode,
        catalog: Arc<PromptCatalog>,
        provider: Option<Arc<dyn ChatProvider>>,
        fixtures: FixtureStore,
    ) -> Self {
        Self {
            mode,
            catalog,
            provider,
            fixtures,
            max_retries: DEFAULT_MAX_RETRIES,
            max_tokens: DEFAULT_MAX_TOKENS,
            counters: Counters::default(),
        }
    }

    /// Replay-only gateway over the shipped catalog.
    pub fn replay(fixtures_dir: impl Into<std::path::PathBuf>) -> Self {
        Self::new(
            GatewayMode::Replay,
            Arc::new(PromptCatalog::shipped()),
            None,
            FixtureStore::new(fixtures_dir),
        )
    }

    pub fn with_max_retries(mut self, retries: u32) -> Self {
        self.max_retries = retries;
        self
    }

    pub fn mode(&self) -> GatewayMode {
        self.mode
    }

    pub fn catalog(&self) -> &PromptCatalog {
        &self.catalog
    }

    pub fn fixtures(&self) -> &FixtureStore {
        &self.fixtures
    }

    pub fn stats(&self) -> GatewayStats {
        GatewayStats {
            requests: self.counters.requests.load(Ordering::Relaxed),
            replay_hits: self.counters.replay_hits.load(Ordering::Relaxed),
            provider_calls: self.counters.provider_calls.load(Ordering::Relaxed),
            retries: self.counters.retries.load(Ordering::Relaxed),
        }
    }

    /// Whether a live call could be attempted at all.
    pub fn is_available(&self) -> bool {
        self.mode == GatewayMode::Replay || self.provider.is_some()
    }

    /// Full prompt text for a template: the rendered template followed by
    /// the response-format instruction.
    pub fn render(&self, template_id: &str, vars: &Variables) -> Result<String, GatewayError> {
        let t = self.catalog.get(template_id)?;
        let body = t.render(vars)?;
        Ok(format!(
            "{body}\n\nRespond with a single JSON object and nothing else. It must match this JSON schema:\n{}",
            serde_json::to_string(&t.response_schema).expect("schema serializes")
        ))
    }

    pub fn fingerprint_for(&self, template_id: &str, vars: &Variables) -> Result<String, GatewayError> {
        let t = self.catalog.get(template_id)?;
        Ok(fingerprint(template_id, t.version, &self.render(template_id, vars)?))
    }

    pub fn complete_structured(
        &self,
        template_id: &str,
        vars: &Variables,
    ) -> Result<Completion, GatewayError> {
        let template = self.catalog.get(template_id)?;
        let rendered = self.render(template_id, vars)?;
        let fp = fingerprint(template_id, template.version, &rendered);
        self.counters.requests.fetch_add(1, Ordering::Relaxed);

        if self.mode == GatewayMode::Replay {
            let fixture = self.fixtures.get(&fp)?.ok_or_else(|| GatewayError::ReplayMiss {
                template_id: template_id.to_string(),
                fingerprint: fp.clone(),
            })?;
            template.schema().validate(&fixture.parsed).map_err(|errs| {
                GatewayError::SchemaViolation {
                    template_id: template_id.to_string(),
                    attempts: 0,
                    errors: errs.iter().map(ToString::to_string).collect(),
                }
            })?;
            self.counters.replay_hits.fetch_add(1, Ordering::Relaxed);
            return Ok(Completion {
                value: fixture.parsed,
                fingerprint: fp,
                retries: 0,
                replayed: true,
            });
        }

        let provider = self.provider.as_ref().ok_or(GatewayError::Unavailable)?;
        let mut request = LlmRequest {
            template_id: template_id.to_string(),
            template_version: template.version,
            rendered_text: rendered.clone(),
            temperature: 0.0,
            max_tokens: self.max_tokens,
            attempt: 0,
            variables: vars.clone(),
        };
        let mut last_errors = Vec::new();
        for attempt in 0..=self.max_retries {
            if attempt > 0 {
                self.counters.retries.fetch_add(1, Ordering::Relaxed);
                request.attempt = attempt;
                request.rendered_text = format!(
                    "{rendered}\n\nYour previous reply was rejected: {}. Reply again with only a JSON object that matches the schema exactly.",
                    last_errors.join("; ")
                );
            }
            self.counters.provider_calls.fetch_add(1, Ordering::Relaxed);
            let reply = provider.complete(&request).map_err(GatewayError::Transport)?;
            let parsed = match extract_json(&reply.raw_text) {
                Ok(v) => v,
                Err(e) => {
                    last_errors = vec![e];
                    continue;
                }
            };
            if let Err(errs) = template.schema().validate(&parsed) {
                last_errors = errs.iter().map(ToString::to_string).collect();
                continue;
            }
            if self.mode == GatewayMode::Record {
                self.fixtures.put(&Fixture {
                    fingerprint: fp.clone(),
                    template_id: template_id.to_string(),
                    template_version: template.version,
                    rendered_text: rendered,
                    raw_text: reply.raw_text,
                    parsed: parsed.clone(),
                })?;
            }
            return Ok(Completion {
                value: parsed,
                fingerprint: fp,
                retries: attempt,
                replayed: false,
            });
        }
        Err(GatewayError::SchemaViolation {
            template_id: template_id.to_string(),
            attempts: self.max_retries + 1,
            errors: last_errors,
        })
    }

    /// Like [`complete_structured`](Self::complete_structured), then
    /// deserializes into `T`.
    pub fn complete_as<T: serde::de::DeserializeOwned>(
        &self,
        template_id: &str,
        vars: &Variables,
    ) -> Result<(T, Completion), GatewayError> {
        let c = self.complete_structured(template_id, vars)?;
        let v = serde_json::from_value(c.value.clone()).map_err(|e| GatewayError::SchemaViolation {
            template_id: template_id.to_string(),
            attempts: c.retries + 1,
            errors: vec![e.to_string()],
        })?;
        Ok((v, c))
    }
}

//! Application configuration: defaults, then a TOML file, then `ARCMEM_*`
//! environment variables, then command-line flags.

use std::path::{Path, PathBuf};

use arcmem_core::gateway::GatewayMode;
use arcmem_core::memory::MemoryPaths;
use arcmem_core::pipeline::PipelineConfig;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NerKind {
    Capitalization,
    Llm,
}

impl std::str::FromStr for NerKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "capitalization" => Ok(NerKind::Capitalization),
            "llm" => Ok(NerKind::Llm),
            other => Err(format!("unknown NER provider {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AppConfig {
    pub workspace: PathBuf,
    /// Defaults to `<workspace>/memory.sqlite3`.
    pub relational_path: Option<PathBuf>,
    /// Base path of the vector store; defaults to `<workspace>/vectors`.
    pub vectors_path: Option<PathBuf>,
    pub fixtures_dir: PathBuf,
    pub mode: GatewayMode,
    pub bind: String,
    pub embedding_dimension: usize,
    pub embed_utterances: bool,
    pub ner: NerKind,
    pub pronoun_window: usize,
    pub jaccard_threshold: f64,
    pub cluster_threshold: f64,
    pub theta_match: f64,
    pub pipeline: PipelineConfig,
}

impl Default for AppConfig {
    fn default() -> Self {
        Self {
            workspace: PathBuf::from("workspace"),
            relational_path: None,
            vectors_path: None,
            fixtures_dir: PathBuf::from("fixtures/llm"),
            mode: GatewayMode::Replay,
            bind: "127.0.0.1:8737".into(),
            embedding_dimension: arcmem_core::gateway::DEFAULT_EMBEDDING_DIMENSION,
            embed_utterances: false,
            ner: NerKind::Capitalization,
            pronoun_window: arcmem_core::preprocess::DEFAULT_PRONOUN_WINDOW,
            jaccard_threshold: 0.5,
            cluster_threshold: 0.3,
            theta_match: arcmem_core::evaluation::DEFAULT_THETA_MATCH,
            pipeline: PipelineConfig::default(),
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, raw: &str) -> Result<T, CliError>
where
    T::Err: std::fmt::Display,
{
    raw.trim()
        .parse()
        .map_err(|e| CliError::Config(format!("{key}={raw:?}: {e}")))
}

impl AppConfig {
    /// Reads `path` if given, else `arcmem.toml` in the working directory
    /// when present, else defaults.
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let path = match path {
            Some(p) => Some(p.to_path_buf()),
            None => Some(PathBuf::from("arcmem.toml")).filter(|p| p.exists()),
        };
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(&p)
                    .map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
                toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))
            }
        }
    }

    /// Applies `ARCMEM_*` overrides looked up through `get`.
    pub fn apply_env(&mut self, get: impl Fn(&str) -> Option<String>) -> Result<(), CliError> {
        if let Some(v) = get("ARCMEM_WORKSPACE") {
            self.workspace = v.into();
        }
        if let Some(v) = get("ARCMEM_DB") {
            self.relational_path = Some(v.into());
        }
        if let Some(v) = get("ARCMEM_VECTORS") {
            self.vectors_path = Some(v.into());
        }
        if let Some(v) = get("ARCMEM_FIXTURES") {
            self.fixtures_dir = v.into();
        }
        if let Some(v) = get("ARCMEM_MODE") {
            self.mode = parse("ARCMEM_MODE", &v)?;
        }
        if let Some(v) = get("ARCMEM_BIND") {
            self.bind = v;
        }
        if let Some(v) = get("ARCMEM_NER") {
            self.ner = parse("ARCMEM_NER", &v)?;
        }
        if let Some(v) = get("ARCMEM_EMBED_UTTERANCES") {
            self.embed_utterances = parse("ARCMEM_EMBED_UTTERANCES", &v)?;
        }
        if let Some(v) = get("ARCMEM_PRONOUN_WINDOW") {
            self.pronoun_window = parse("ARCMEM_PRONOUN_WINDOW", &v)?;
        }
        if let Some(v) = get("ARCMEM_JACCARD_THRESHOLD") {
            self.jaccard_threshold = parse("ARCMEM_JACCARD_THRESHOLD", &v)?;
        }
        if let Some(v) = get("ARCMEM_CLUSTER_THRESHOLD") {
            self.cluster_threshold = parse("ARCMEM_CLUSTER_THRESHOLD", &v)?;
        }
        if let Some(v) = get("ARCMEM_THETA_MATCH") {
            self.theta_match = parse("ARCMEM_THETA_MATCH", &v)?;
        }
        if let Some(v) = get("ARCMEM_THETA_FLAG") {
            self.pipeline.theta_flag = parse("ARCMEM_THETA_FLAG", &v)?;
        }
        if let Some(v) = get("ARCMEM_THETA_DEDUP") {
            self.pipeline.theta_dedup = parse("ARCMEM_THETA_DEDUP", &v)?;
        }
        if let Some(v) = get("ARCMEM_RETRIEVAL_K") {
            self.pipeline.retrieval_k = parse("ARCMEM_RETRIEVAL_K", &v)?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        self.pipeline.validate().map_err(CliError::Config)?;
        if !(0.0..=1.0).contains(&self.jaccard_threshold) {
            return bad(format!("jaccard_threshold {} outside [0, 1]", self.jaccard_threshold));
        }
        if !(self.cluster_threshold > 0.0 && self.cluster_threshold < 2.0) {
            return bad(format!("cluster_threshold {} outside (0, 2)", self.cluster_threshold));
        }
        if !(-1.0..=1.0).contains(&self.theta_match) {
            return bad(format!("theta_match {} outside [-1, 1]", self.theta_match));
        }
        if self.pronoun_window == 0 {
            return bad("pronoun_window must be at least 1".into());
        }
        if self.embedding_dimension < 2 {
            return bad(format!("embedding_dimension {} below 2", self.embedding_dimension));
        }
        if self.workspace.as_os_str().is_empty() {
            return bad("workspace path is empty".into());
        }
        Ok(())
    }

    pub fn memory_paths(&self) -> MemoryPaths {
        MemoryPaths {
            relational: self
                .relational_path
                .clone()
                .unwrap_or_else(|| self.workspace.join("memory.sqlite3")),
            vectors: self
                .vectors_path
                .clone()
                .unwrap_or_else(|| self.workspace.join("vectors")),
        }
    }
}

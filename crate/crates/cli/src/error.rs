use std::path::PathBuf;

use arcmem_core::evaluation::EvalError;
use arcmem_core::gateway::GatewayError;
use arcmem_core::memory::MemoryError;
use arcmem_core::pipeline::PipelineError;
use arcmem_core::preprocess::PreprocessError;
use arcmem_core::ModelError;
use serde_json::{json, Value};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("{0}")]
    Usage(String),
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    BadInput {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Memory(#[from] MemoryError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Preprocess(#[from] PreprocessError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("server: {0}")]
    Server(String),
}

impl CliError {
    pub fn code(&self) -> &'static str {
        match self {
            CliError::Config(_) => "CONFIG",
            CliError::Usage(_) => "USAGE",
            CliError::Io { .. } => "IO",
            CliError::BadInput { .. } => "BAD_INPUT",
            CliError::Model(_) => "MODEL",
            CliError::Memory(e) => e.code(),
            CliError::Gateway(e) => e.code(),
            CliError::Preprocess(e) => e.code(),
            CliError::Pipeline(e) => e.code(),
            CliError::Eval(e) => e.code(),
            CliError::Server(_) => "SERVER",
        }
    }

    /// The machine-readable form printed on stderr before a nonzero exit.
    pub fn to_json(&self) -> Value {
        json!({ "error": { "code": self.code(), "message": self.to_string() } })
    }

    pub fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> CliError {
        let path = path.into();
        move |source| CliError::Io { path, source }
    }
}

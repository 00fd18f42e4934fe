use arcmem_core::gateway::GatewayError;
use arcmem_core::memory::MemoryError;
use arcmem_core::pipeline::PipelineError;
use arcmem_core::preprocess::PreprocessError;
use arcmem_core::ModelError;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde_json::json;

/// Error body: `{"error": {"code", "message", "violations"}}`, where
/// `violations` lists validation codes (empty unless status is 400 from
/// arc validation, in which case `code` is the first of them).
#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: String,
    pub message: String,
    pub violations: Vec<String>,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        Self {
            status,
            code: code.to_string(),
            message: message.into(),
            violations: Vec::new(),
        }
    }

    pub fn bad_request(code: &str, message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, code, message)
    }

    pub fn not_found(what: impl std::fmt::Display) -> Self {
        Self::new(StatusCode::NOT_FOUND, "NOT_FOUND", format!("{what} not found"))
    }

    pub fn conflict(code: &str, message: impl Into<String>) -> Self {
        Self::new(StatusCode::CONFLICT, code, message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({
            "error": {
                "code": self.code,
                "message": self.message,
                "violations": self.violations,
            }
        });
        (self.status, Json(body)).into_response()
    }
}

impl From<MemoryError> for ApiError {
    fn from(e: MemoryError) -> Self {
        let status = match &e {
            MemoryError::UnknownArc(_) | MemoryError::UnknownCharacter(_) => StatusCode::NOT_FOUND,
            MemoryError::Invalid(_)
            | MemoryError::DanglingCharacters(_)
            | MemoryError::InvalidThreshold(_)
            | MemoryError::InvalidK => StatusCode::BAD_REQUEST,
            MemoryError::Conflict(_) | MemoryError::AppellationTaken { .. } => StatusCode::CONFLICT,
            MemoryError::Embedding(_) => StatusCode::SERVICE_UNAVAILABLE,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        let violations = match &e {
            MemoryError::Invalid(v) => v.iter().map(|v| v.code.as_str().to_string()).collect(),
            MemoryError::DanglingCharacters(_) => vec!["UNKNOWN_CHARACTER".to_string()],
            _ => Vec::new(),
        };
        // A validation failure reports its first violation as the code.
        let code = violations.first().cloned().unwrap_or_else(|| e.code().to_string());
        Self {
            status,
            code,
            message: e.to_string(),
            violations,
        }
    }
}

impl From<GatewayError> for ApiError {
    fn from(e: GatewayError) -> Self {
        let status = if e.is_unavailable() {
            StatusCode::SERVICE_UNAVAILABLE
        } else {
            StatusCode::BAD_GATEWAY
        };
        Self::new(status, e.code(), e.to_string())
    }
}

impl From<ModelError> for ApiError {
    fn from(e: ModelError) -> Self {
        Self::bad_request("MODEL", e.to_string())
    }
}

impl From<PreprocessError> for ApiError {
    fn from(e: PreprocessError) -> Self {
        match e {
            PreprocessError::Gateway(g) => g.into(),
            PreprocessError::Memory(m) => m.into(),
            PreprocessError::Io { .. } => Self::new(StatusCode::NOT_FOUND, e.code(), e.to_string()),
            other => Self::new(StatusCode::CONFLICT, other.code(), other.to_string()),
        }
    }
}

impl From<PipelineError> for ApiError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Gateway(g) => g.into(),
            PipelineError::Memory(m) => m.into(),
            PipelineError::Preprocess(p) => p.into(),
            PipelineError::Model(m) => m.into(),
            other => Self::new(StatusCode::CONFLICT, other.code(), other.to_string()),
        }
    }
}

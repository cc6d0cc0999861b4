use serde_json::{json, Value};
use thiserror::Error;

/// A structured per-request failure: `{"error": {"code", "message"}}`.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{code}: {message}")]
pub struct ApiError {
    pub status: u16,
    pub code: &'static str,
    pub message: String,
}

impl ApiError {
    pub fn new(status: u16, code: &'static str, message: impl Into<String>) -> Self {
        ApiError {
            status,
            code,
            message: message.into(),
        }
    }

    pub fn invalid_json(m: impl Into<String>) -> Self {
        Self::new(400, "invalid_json", m)
    }

    pub fn invalid(m: impl Into<String>) -> Self {
        Self::new(400, "invalid_request", m)
    }

    pub fn markup(m: impl Into<String>) -> Self {
        Self::new(422, "malformed_annotation", m)
    }

    pub fn harness(m: impl Into<String>) -> Self {
        Self::new(422, "generation_failed", m)
    }

    pub fn snapshot(m: impl Into<String>) -> Self {
        Self::new(422, "corrupt_snapshot", m)
    }

    pub fn io(m: impl Into<String>) -> Self {
        Self::new(500, "io_error", m)
    }

    pub fn not_found(m: impl Into<String>) -> Self {
        Self::new(404, "not_found", m)
    }

    pub fn body(&self) -> Value {
        json!({ "error": { "code": self.code, "message": self.message } })
    }
}

use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::Serialize;

use rarespot_core::Error as CoreError;

/// JSON error body: `{"code": ..., "message": ...}`.
#[derive(Debug, thiserror::Error)]
#[error("{code}: {message}")]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
}

#[derive(Serialize)]
struct Body<'a> {
    code: &'a str,
    message: &'a str,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            code,
            message: message.into(),
        }
    }

    pub fn not_found(what: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", what)
    }

    pub fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "invalid_request", message)
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message)
    }
}

impl From<CoreError> for ApiError {
    fn from(e: CoreError) -> Self {
        let message = e.to_string();
        let (status, code) = match e {
            CoreError::BudgetExhausted { .. } => (StatusCode::CONFLICT, "budget_exhausted"),
            CoreError::Exhausted => (StatusCode::CONFLICT, "surface_exhausted"),
            CoreError::NoPendingPatch => (StatusCode::CONFLICT, "no_pending_patch"),
            CoreError::PatchMismatch { .. } => (StatusCode::CONFLICT, "patch_mismatch"),
            CoreError::OutOfBounds { .. } => (StatusCode::BAD_REQUEST, "out_of_bounds"),
            CoreError::Config(_) | CoreError::ModelGridMismatch { .. } => {
                (StatusCode::BAD_REQUEST, "invalid_config")
            }
            CoreError::Io { .. }
            | CoreError::Scene(_)
            | CoreError::SizeMismatch { .. }
            | CoreError::Image(_)
            | CoreError::Csv(_) => (StatusCode::UNPROCESSABLE_ENTITY, "unresolvable_reference"),
            _ => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
        };
        Self::new(status, code, message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = Json(Body {
            code: self.code,
            message: &self.message,
        });
        (self.status, body).into_response()
    }
}

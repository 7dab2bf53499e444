use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use meltpool_core::Error as CoreError;

/// An HTTP status plus a message, rendered as `{"error": message}`.
#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub message: String,
}

impl ApiError {
    pub fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
        }
    }

    pub fn not_found(what: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, what)
    }

    pub fn conflict(what: impl Into<String>) -> Self {
        Self::new(StatusCode::CONFLICT, what)
    }

    pub fn unprocessable(what: impl Into<String>) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, what)
    }
}

fn status_of(e: &CoreError) -> StatusCode {
    match e {
        CoreError::Decode { .. } | CoreError::Dimensions { .. } => StatusCode::BAD_REQUEST,
        CoreError::SeedOutOfBounds { .. } | CoreError::InvalidParameter(_) => StatusCode::UNPROCESSABLE_ENTITY,
        CoreError::EmptySelection => StatusCode::CONFLICT,
        CoreError::Stage { source, .. } => status_of(source),
        _ => StatusCode::INTERNAL_SERVER_ERROR,
    }
}

impl From<CoreError> for ApiError {
    fn from(e: CoreError) -> Self {
        Self::new(status_of(&e), e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        if self.status.is_server_error() {
            log::error!("{}", self.message);
        }
        (self.status, Json(serde_json::json!({ "error": self.message }))).into_response()
    }
}

pub type ApiResult<T> = std::result::Result<T, ApiError>;

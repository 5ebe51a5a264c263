use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde_json::json;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("training in progress")]
    Busy,

    #[error("pair {0} is not queued")]
    NotFound(u64),

    #[error("pair {0} is already labeled")]
    Conflict(u64),

    #[error("{labeled} labeled pairs, {required} required")]
    InsufficientLabels { labeled: usize, required: usize },

    #[error("bad request: {0}")]
    BadRequest(String),

    #[error("render: {0}")]
    Render(String),

    #[error(transparent)]
    Core(#[from] d3po_core::Error),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, ServiceError>;

impl ServiceError {
    pub fn status(&self) -> StatusCode {
        match self {
            ServiceError::Busy | ServiceError::Conflict(_) => StatusCode::CONFLICT,
            ServiceError::NotFound(_) => StatusCode::NOT_FOUND,
            ServiceError::InsufficientLabels { .. } => StatusCode::PRECONDITION_FAILED,
            ServiceError::BadRequest(_) => StatusCode::BAD_REQUEST,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let mut body = json!({ "error": self.to_string() });
        match &self {
            ServiceError::Busy => body["busy"] = json!(true),
            ServiceError::InsufficientLabels { labeled, required } => {
                body["labeled"] = json!(labeled);
                body["required"] = json!(required);
            }
            _ => {}
        }
        (self.status(), Json(body)).into_response()
    }
}

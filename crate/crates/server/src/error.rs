use arbor_core::annotation::Violation;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde_json::json;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ApiError {
    #[error("unknown image {0}")]
    UnknownImage(String),
    #[error("no camera {camera} for image {image}")]
    UnknownCamera { image: String, camera: String },
    #[error("stale version: expected {expected}, current {current}")]
    StaleVersion { expected: u64, current: u64 },
    #[error("annotation has {} violation(s)", .0.len())]
    InvalidAnnotation(Vec<Violation>),
    #[error("document is for image {found}, not {expected}")]
    ImageMismatch { expected: String, found: String },
    #[error("no branch mask or annotation for image {0}")]
    NoMask(String),
    #[error("no 3D model yet")]
    NoModel,
    #[error("{0}")]
    Trace(arbor_core::medialaxis::TraceError),
    #[error("{0}")]
    BadRequest(String),
    #[error("{0}")]
    Internal(String),
}

impl ApiError {
    pub fn status(&self) -> StatusCode {
        match self {
            ApiError::UnknownImage(_) | ApiError::UnknownCamera { .. } => StatusCode::NOT_FOUND,
            ApiError::StaleVersion { .. } | ApiError::NoModel | ApiError::NoMask(_) => StatusCode::CONFLICT,
            ApiError::InvalidAnnotation(_) | ApiError::ImageMismatch { .. } | ApiError::Trace(_) => {
                StatusCode::UNPROCESSABLE_ENTITY
            }
            ApiError::BadRequest(_) => StatusCode::BAD_REQUEST,
            ApiError::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }

    pub fn code(&self) -> &'static str {
        use arbor_core::medialaxis::TraceError as T;
        match self {
            ApiError::UnknownImage(_) => "UNKNOWN_IMAGE",
            ApiError::UnknownCamera { .. } => "UNKNOWN_CAMERA",
            ApiError::StaleVersion { .. } => "STALE_VERSION",
            ApiError::InvalidAnnotation(_) => "INVALID_ANNOTATION",
            ApiError::ImageMismatch { .. } => "IMAGE_MISMATCH",
            ApiError::NoMask(_) => "NO_MASK",
            ApiError::NoModel => "NO_MODEL",
            ApiError::Trace(T::NoFlowAtStart(_)) => "NoFlowAtStart",
            ApiError::Trace(T::InvalidParams) => "InvalidParams",
            ApiError::Trace(_) => "TRACE_FAILED",
            ApiError::BadRequest(_) => "BAD_REQUEST",
            ApiError::Internal(_) => "INTERNAL",
        }
    }
}

impl From<arbor_core::io::IoError> for ApiError {
    fn from(e: arbor_core::io::IoError) -> Self {
        ApiError::Internal(e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let mut body = json!({ "code": self.code(), "message": self.to_string() });
        match &self {
            ApiError::InvalidAnnotation(v) => body["violations"] = json!(v),
            ApiError::StaleVersion { current, .. } => body["current_version"] = json!(current),
            _ => {}
        }
        (self.status(), Json(json!({ "error": body }))).into_response()
    }
}

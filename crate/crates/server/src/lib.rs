//! HTTP service for the annotation tool: images, versioned annotations, flow fields,
//! guided traces, epipolar lines and reprojection overlays.
//!
//! | Method | Path | Response |
//! |---|---|---|
//! | GET | `/images` | image list with camera, size and document version |
//! | GET | `/images/{id}` | PNG or JPEG bytes |
//! | GET | `/annotations/{id}` | `{version, document}` |
//! | PUT | `/annotations/{id}` | body `{expected_version, document}`, returns `{version}` |
//! | GET | `/epipolar/{src},{dst}/{x}/{y}` | `{line: [a, b, c]}` in `dst` |
//! | POST | `/trace/{id}` | body `{p0, p1?, params?}`, returns the traced polyline |
//! | GET | `/flow/{id}` | FFLD bytes |
//! | GET | `/overlay/{id}` | projected model segments |
//!
//! Errors are `{"error": {"code", "message", ...}}` with 400, 404, 409, 422 or 500.

mod error;
mod store;

use std::sync::Arc;

use arbor_core::annotation::ImageAnnotation;
use axum::extract::{Path, State};
use axum::http::header;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::json;

pub use error::ApiError;
pub use store::{AnnotationStore, CachedFlow, ImageInfo, OpenError, ServerConfig, Stats, TraceRequest, Versioned};

/// Response header reporting whether a trace came from cache.
pub const CACHE_HEADER: &str = "x-arbor-cache";

type Shared = Arc<AnnotationStore>;

pub fn router(store: Shared) -> Router {
    Router::new()
        .route("/images", get(list_images))
        .route("/images/{id}", get(get_image))
        .route("/annotations/{id}", get(get_annotation).put(put_annotation))
        .route("/epipolar/{pair}/{x}/{y}", get(get_epipolar))
        .route("/trace/{id}", post(post_trace))
        .route("/flow/{id}", get(get_flow))
        .route("/overlay/{id}", get(get_overlay))
        .with_state(store)
}

async fn blocking<T: Send + 'static>(
    store: Shared,
    f: impl FnOnce(&AnnotationStore) -> Result<T, ApiError> + Send + 'static,
) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(move || f(&store))
        .await
        .map_err(|e| ApiError::Internal(e.to_string()))?
}

async fn list_images(State(s): State<Shared>) -> Json<Vec<ImageInfo>> {
    Json(s.images())
}

async fn get_image(State(s): State<Shared>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let (bytes, ct) = blocking(s, move |s| s.image_bytes(&id)).await?;
    Ok(([(header::CONTENT_TYPE, ct)], bytes).into_response())
}

async fn get_annotation(State(s): State<Shared>, Path(id): Path<String>) -> Result<Json<Versioned>, ApiError> {
    s.annotation(&id).map(Json)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PutBody {
    expected_version: u64,
    document: ImageAnnotation,
}

async fn put_annotation(
    State(s): State<Shared>,
    Path(id): Path<String>,
    body: Result<Json<PutBody>, axum::extract::rejection::JsonRejection>,
) -> Result<Json<serde_json::Value>, ApiError> {
    let Json(body) = body.map_err(|e| ApiError::BadRequest(e.body_text()))?;
    let version = blocking(s, move |s| s.put_annotation(&id, body.document, body.expected_version)).await?;
    Ok(Json(json!({ "version": version })))
}

async fn get_epipolar(
    State(s): State<Shared>,
    Path((pair, x, y)): Path<(String, f64, f64)>,
) -> Result<Json<serde_json::Value>, ApiError> {
    let (src, dst) = pair
        .split_once(',')
        .ok_or_else(|| ApiError::BadRequest(format!("pair {pair:?} is not `src,dst`")))?;
    let line = s.epipolar(src, dst, x, y)?;
    Ok(Json(json!({ "src": src, "dst": dst, "line": line })))
}

async fn post_trace(
    State(s): State<Shared>,
    Path(id): Path<String>,
    body: Result<Json<TraceRequest>, axum::extract::rejection::JsonRejection>,
) -> Result<Response, ApiError> {
    let Json(req) = body.map_err(|e| ApiError::BadRequest(e.body_text()))?;
    let (bytes, hit) = blocking(s, move |s| s.trace(&id, &req)).await?;
    let cache = if hit { "hit" } else { "miss" };
    Ok((
        [(header::CONTENT_TYPE, "application/json"), (header::HeaderName::from_static(CACHE_HEADER), cache)],
        bytes.as_ref().clone(),
    )
        .into_response())
}

async fn get_flow(State(s): State<Shared>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let flow = blocking(s, move |s| s.flow(&id)).await?;
    Ok(([(header::CONTENT_TYPE, "application/octet-stream")], flow.ffld.clone()).into_response())
}

async fn get_overlay(State(s): State<Shared>, Path(id): Path<String>) -> Result<Json<serde_json::Value>, ApiError> {
    let segments = blocking(s, move |s| s.overlay(&id)).await?;
    Ok(Json(json!({ "segments": segments })))
}

//! JSON routes over [`Service`].

use std::sync::Arc;

use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use d3po_core::d3po::PreferenceLabel;
use serde::Deserialize;
use serde_json::json;
use tokio::net::TcpListener;

use crate::error::{Result, ServiceError};
use crate::service::Service;

#[derive(Debug, Deserialize)]
struct LabelRequest {
    pair_id: u64,
    choice: String,
}

pub fn router(svc: Arc<Service>) -> Router {
    Router::new()
        .route("/api/pairs/next", get(next_pair))
        .route("/api/labels", post(submit_label))
        .route("/api/metrics", get(metrics))
        .route("/api/epoch/advance", post(advance))
        .route("/api/session", get(session))
        .with_state(svc)
}

async fn blocking<T: Send + 'static>(
    f: impl FnOnce() -> Result<T> + Send + 'static,
) -> Result<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ServiceError::Io(std::io::Error::other(e)))?
}

async fn next_pair(State(svc): State<Arc<Service>>) -> Result<Response> {
    match blocking(move || svc.next_unlabeled()).await? {
        Some(view) => Ok(Json(view).into_response()),
        None => Ok(StatusCode::NO_CONTENT.into_response()),
    }
}

async fn submit_label(
    State(svc): State<Arc<Service>>,
    Json(req): Json<LabelRequest>,
) -> Result<Response> {
    let choice: PreferenceLabel = match req.choice.as_str() {
        "a" | "b" | "tie" => req.choice.parse()?,
        other => return Err(ServiceError::BadRequest(format!("choice '{other}'"))),
    };
    let remaining = blocking(move || svc.submit_label(req.pair_id, choice)).await?;
    Ok(Json(json!({ "remaining": remaining })).into_response())
}

async fn metrics(State(svc): State<Arc<Service>>) -> Response {
    Json(svc.metrics()).into_response()
}

async fn session(State(svc): State<Arc<Service>>) -> Response {
    Json(svc.session()).into_response()
}

async fn advance(State(svc): State<Arc<Service>>) -> Result<Response> {
    let stats = blocking(move || svc.advance_epoch()).await?;
    Ok(Json(stats).into_response())
}

/// Serves on an already bound listener until the process ends.
pub async fn serve(svc: Arc<Service>, listener: TcpListener) -> std::io::Result<()> {
    axum::serve(listener, router(svc)).await
}

//! axum routes over [`Service`]. Callers identify themselves with the
//! trusted `x-actor-id` header; uploads also name their key with `x-key-id`
//! and may pick a network profile with `x-profile`.

use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Path, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde_json::json;

use super::{ApiError, JobRequest, ReviewRequest, Service};

pub const ACTOR_HEADER: &str = "x-actor-id";
pub const KEY_HEADER: &str = "x-key-id";
pub const PROFILE_HEADER: &str = "x-profile";

const MAX_UPLOAD_BYTES: usize = 512 * 1024 * 1024;

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, Json(self.to_json())).into_response()
    }
}

type Svc = State<Arc<Service>>;

fn header_value<'a>(h: &'a HeaderMap, name: &str) -> Option<&'a str> {
    h.get(name).and_then(|v| v.to_str().ok()).filter(|s| !s.is_empty())
}

fn require_header<'a>(h: &'a HeaderMap, name: &str) -> Result<&'a str, ApiError> {
    header_value(h, name).ok_or_else(|| ApiError::bad_request("missing_header", format!("{name} header is required")))
}

fn parse_json<T: DeserializeOwned>(body: &[u8]) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request("invalid_json", e.to_string()))
}

/// Runs blocking service work off the async executor.
async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, ApiError> + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(500, "internal", e.to_string()))?
}

pub fn router(svc: Arc<Service>) -> Router {
    Router::new()
        .route("/v1/datasets", post(upload))
        .route("/v1/jobs", post(submit_job).get(list_jobs))
        .route("/v1/jobs/{id}", get(job_status))
        .route("/v1/images/{id}", get(get_image))
        .route("/v1/reviews", post(submit_review))
        .route("/v1/reviews/{id}", get(get_review))
        .route("/v1/ledger/verify", get(ledger_verify))
        .route("/v1/ledger/entries", get(ledger_entries))
        .route("/v1/metrics", get(metrics))
        .layer(DefaultBodyLimit::max(MAX_UPLOAD_BYTES))
        .with_state(svc)
}

async fn upload(State(svc): Svc, h: HeaderMap, body: Bytes) -> Result<Response, ApiError> {
    let actor = require_header(&h, ACTOR_HEADER)?.to_string();
    let key_id = require_header(&h, KEY_HEADER)?.to_string();
    let profile = header_value(&h, PROFILE_HEADER).map(str::to_string);
    let receipt = blocking(move || svc.upload(&actor, &key_id, profile.as_deref(), &body)).await?;
    let status = if receipt.created { StatusCode::CREATED } else { StatusCode::OK };
    Ok((status, Json(receipt)).into_response())
}

async fn submit_job(State(svc): Svc, h: HeaderMap, body: Bytes) -> Result<Response, ApiError> {
    let actor = require_header(&h, ACTOR_HEADER)?.to_string();
    let req: JobRequest = parse_json(&body)?;
    let runner = svc.clone();
    let rec = blocking(move || svc.submit_job(&actor, req)).await?;
    let job_id = rec.job_id.clone();
    // Internal worker; progress is visible through GET /v1/jobs/{id}.
    tokio::task::spawn_blocking(move || {
        let _ = runner.run_job(&job_id);
    });
    Ok((StatusCode::ACCEPTED, Json(json!({ "job_id": rec.job_id, "state": rec.state }))).into_response())
}

async fn list_jobs(State(svc): Svc) -> Response {
    Json(svc.list_jobs()).into_response()
}

async fn job_status(State(svc): Svc, Path(id): Path<String>) -> Result<Response, ApiError> {
    Ok(Json(svc.job_status(&id)?).into_response())
}

async fn get_image(State(svc): Svc, h: HeaderMap, Path(id): Path<String>) -> Result<Response, ApiError> {
    let actor = require_header(&h, ACTOR_HEADER)?.to_string();
    let bytes = blocking(move || svc.get_image(&actor, &id)).await?;
    Ok(([(header::CONTENT_TYPE, "application/json")], bytes).into_response())
}

async fn submit_review(State(svc): Svc, h: HeaderMap, body: Bytes) -> Result<Response, ApiError> {
    let actor = require_header(&h, ACTOR_HEADER)?.to_string();
    let req: ReviewRequest = parse_json(&body)?;
    let review = blocking(move || svc.submit_review(&actor, req)).await?;
    Ok((StatusCode::CREATED, Json(review)).into_response())
}

async fn get_review(State(svc): Svc, Path(id): Path<String>) -> Result<Response, ApiError> {
    Ok(Json(svc.get_review(&id)?).into_response())
}

async fn ledger_verify(State(svc): Svc) -> Result<Response, ApiError> {
    let verdict = blocking(move || svc.ledger_verify()).await?;
    Ok(Json(verdict).into_response())
}

async fn ledger_entries(State(svc): Svc) -> Response {
    Json(svc.ledger_entries()).into_response()
}

async fn metrics(State(svc): Svc) -> Response {
    Json(svc.metrics()).into_response()
}

/// Serves until the process is stopped.
pub async fn serve(svc: Arc<Service>, addr: &str) -> std::io::Result<()> {
    for job_id in svc.queued_jobs() {
        let s = svc.clone();
        tokio::task::spawn_blocking(move || {
            let _ = s.run_job(&job_id);
        });
    }
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router(svc)).await
}

//! JSON-over-HTTP routes.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde_json::json;

use crate::service::{AnnotationService, ServiceError, SubmitRequest};

pub type SharedService = Arc<Mutex<AnnotationService>>;

struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
}

impl ApiError {
    fn bad_request(message: impl Into<String>) -> Self {
        ApiError {
            status: StatusCode::BAD_REQUEST,
            code: "invalid_request",
            message: message.into(),
        }
    }
}

impl From<ServiceError> for ApiError {
    fn from(e: ServiceError) -> Self {
        let status = match &e {
            ServiceError::UnknownAnnotator(_) | ServiceError::UnknownPair(_) => StatusCode::NOT_FOUND,
            ServiceError::Invalid(_) => StatusCode::UNPROCESSABLE_ENTITY,
            ServiceError::NoDoneTasks => StatusCode::CONFLICT,
            ServiceError::Storage(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError {
            status,
            code: e.code(),
            message: e.to_string(),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "code": self.code, "message": self.message }))).into_response()
    }
}

fn lock(service: &SharedService) -> std::sync::MutexGuard<'_, AnnotationService> {
    service.lock().unwrap_or_else(|poisoned| poisoned.into_inner())
}

async fn next_task(
    State(service): State<SharedService>,
    Query(params): Query<HashMap<String, String>>,
) -> Result<Response, ApiError> {
    let annotator = params
        .get("annotator")
        .filter(|a| !a.is_empty())
        .ok_or_else(|| ApiError::bad_request("missing `annotator` query parameter"))?;
    match lock(&service).next_task(annotator)? {
        Some(task) => Ok(Json(task).into_response()),
        None => Ok(StatusCode::NO_CONTENT.into_response()),
    }
}

async fn submit(State(service): State<SharedService>, body: Bytes) -> Result<Response, ApiError> {
    let req: SubmitRequest =
        serde_json::from_slice(&body).map_err(|e| ApiError::bad_request(format!("malformed judgment: {e}")))?;
    let ack = lock(&service).submit_judgment(req)?;
    Ok((StatusCode::CREATED, Json(ack)).into_response())
}

async fn report(State(service): State<SharedService>) -> Result<Response, ApiError> {
    Ok(Json(lock(&service).agreement_report()?).into_response())
}

async fn pair(State(service): State<SharedService>, Path(id): Path<String>) -> Result<Response, ApiError> {
    Ok(Json(lock(&service).pair(&id)?).into_response())
}

async fn not_found() -> ApiError {
    ApiError {
        status: StatusCode::NOT_FOUND,
        code: "not_found",
        message: "no such route".into(),
    }
}

pub fn router(service: SharedService) -> Router {
    Router::new()
        .route("/api/tasks/next", get(next_task))
        .route("/api/judgments", post(submit))
        .route("/api/report", get(report))
        .route("/api/pairs/{id}", get(pair))
        .fallback(not_found)
        .with_state(service)
}

/// Binds `addr` and serves until the process is stopped.
pub async fn serve(service: AnnotationService, addr: &str) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router(Arc::new(Mutex::new(service)))).await
}

//! HTTP front end: ingest documents, answer questions with judged references,
//! capture feedback and export training data.
//!
//! | route | method | body / query | response |
//! |---|---|---|---|
//! | `/ingest` | POST | `{doc_id, text}` | `{doc_id, chunks_created, pairs_generated}` |
//! | `/query` | POST | `{question, options?: {k, threshold, q, min_qim}}` | [`wire::QueryResponse`] |
//! | `/feedback` | POST | `{question, final_answer, references, rating, comment?}` | `{id}` |
//! | `/export/training` | GET | `?min_rating=&split=train\|test\|all` | Guanaco text |
//! | `/health` | GET | | `{status, collection_size, dimension, providers}` |

mod state;
pub mod wire;

use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::Deserialize;

pub use state::{
    AppState, ExportSplit, Health, IngestRequest, IngestResponse, ServiceError, COLLECTION_NAME,
    DEFAULT_EXPORT_MIN_RATING, GENERATED_FILE_NAME, VECTORS_DIR_NAME,
};

use qimrag_core::feedback::{NewFeedback, MAX_RATING, MIN_RATING};
use wire::{FeedbackResponse, QueryRequest, QueryResponse};

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let status = match &self {
            ServiceError::BadRequest(_) => StatusCode::BAD_REQUEST,
            ServiceError::NotFound(_) => StatusCode::NOT_FOUND,
            ServiceError::Conflict(_) => StatusCode::CONFLICT,
            ServiceError::Provider(_) => StatusCode::BAD_GATEWAY,
            ServiceError::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        (status, Json(serde_json::json!({ "error": self.to_string() }))).into_response()
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/ingest", post(ingest))
        .route("/query", post(query))
        .route("/feedback", post(feedback))
        .route("/export/training", get(export_training))
        .route("/health", get(health))
        .with_state(state)
}

/// Serves until the listener fails or the process receives Ctrl-C.
pub async fn serve(listener: tokio::net::TcpListener, state: Arc<AppState>) -> std::io::Result<()> {
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

fn parse_body<T: DeserializeOwned>(body: &Bytes) -> Result<T, ServiceError> {
    serde_json::from_slice(body).map_err(|e| ServiceError::BadRequest(format!("malformed body: {e}")))
}

async fn blocking<T, F>(f: F) -> Result<T, ServiceError>
where
    T: Send + 'static,
    F: FnOnce() -> Result<T, ServiceError> + Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ServiceError::Internal(e.to_string()))?
}

async fn ingest(State(state): State<Arc<AppState>>, body: Bytes) -> Result<Json<IngestResponse>, ServiceError> {
    let req: IngestRequest = parse_body(&body)?;
    let resp = blocking(move || state.ingest(req)).await?;
    tracing::info!(doc_id = %resp.doc_id, chunks = resp.chunks_created, "ingested");
    Ok(Json(resp))
}

async fn query(State(state): State<Arc<AppState>>, body: Bytes) -> Result<Response, ServiceError> {
    let req: QueryRequest = parse_body(&body)?;
    let answer = blocking(move || state.query(&req.question, &req.options)).await?;
    let status = if answer.degraded {
        StatusCode::BAD_GATEWAY
    } else {
        StatusCode::OK
    };
    Ok((status, Json(QueryResponse::from(answer))).into_response())
}

async fn feedback(State(state): State<Arc<AppState>>, body: Bytes) -> Result<Json<FeedbackResponse>, ServiceError> {
    let new: NewFeedback = parse_body(&body)?;
    let record = blocking(move || state.record_feedback(new)).await?;
    Ok(Json(FeedbackResponse { id: record.id }))
}

#[derive(Debug, Deserialize)]
struct ExportParams {
    min_rating: Option<u8>,
    #[serde(default)]
    split: ExportSplit,
}

async fn export_training(
    State(state): State<Arc<AppState>>,
    Query(params): Query<ExportParams>,
) -> Result<Response, ServiceError> {
    let min_rating = params.min_rating.unwrap_or(DEFAULT_EXPORT_MIN_RATING);
    if !(MIN_RATING..=MAX_RATING).contains(&min_rating) {
        return Err(ServiceError::BadRequest(format!(
            "min_rating must be between {MIN_RATING} and {MAX_RATING}"
        )));
    }
    let body = blocking(move || Ok(state.export_training(min_rating, params.split))).await?;
    Ok(([(header::CONTENT_TYPE, "text/plain; charset=utf-8")], body).into_response())
}

async fn health(State(state): State<Arc<AppState>>) -> Json<Health> {
    Json(state.health())
}

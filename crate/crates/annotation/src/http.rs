use std::sync::Arc;

use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use idte_core::DrugLabel;
use serde::{Deserialize, Serialize};

use crate::agreement::compute_agreement;
use crate::error::AnnotationError;
use crate::export::export_dataset;
use crate::record::Submission;
use crate::store::Store;

#[derive(Debug, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
}

impl IntoResponse for AnnotationError {
    fn into_response(self) -> Response {
        let status = self.status();
        if status.is_server_error() {
            tracing::error!(error = %self, "request failed");
        }
        (
            status,
            Json(ErrorBody {
                error: self.to_string(),
            }),
        )
            .into_response()
    }
}

#[derive(Debug, Deserialize)]
struct NextQuery {
    annotator: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct WeightEntry {
    pub hashtag: String,
    pub weight: u64,
}

const JSONL: &str = "application/x-ndjson";

pub fn router(store: Arc<Store>) -> Router {
    Router::new()
        .route("/api/categories", get(categories))
        .route("/api/posts/next", get(next_post))
        .route("/api/posts/{id}", get(get_post))
        .route("/api/annotations", post(submit))
        .route("/api/agreement", get(agreement))
        .route("/api/export", get(export_corpus))
        .route("/api/export/adjudication", get(export_adjudication))
        .route("/api/hashtag-weights", get(hashtag_weights))
        .with_state(store)
}

async fn categories() -> Json<Vec<&'static str>> {
    Json(DrugLabel::ALL.iter().map(|l| l.name()).collect())
}

async fn next_post(State(store): State<Arc<Store>>, Query(q): Query<NextQuery>) -> Response {
    let snap = store.snapshot();
    match snap.next_unlabeled(&q.annotator) {
        Some(item) => Json(item).into_response(),
        None => StatusCode::NO_CONTENT.into_response(),
    }
}

async fn get_post(State(store): State<Arc<Store>>, Path(id): Path<u64>) -> Response {
    match store.snapshot().items.get(&id) {
        Some(item) => Json(item).into_response(),
        None => AnnotationError::UnknownItem(id).into_response(),
    }
}

async fn submit(State(store): State<Arc<Store>>, Json(body): Json<Submission>) -> Response {
    let res = tokio::task::spawn_blocking(move || store.submit(body)).await;
    match res {
        Ok(Ok(ack)) => (StatusCode::CREATED, Json(ack)).into_response(),
        Ok(Err(e)) => e.into_response(),
        Err(join) => {
            tracing::error!(error = %join, "submission task failed");
            StatusCode::INTERNAL_SERVER_ERROR.into_response()
        }
    }
}

async fn agreement(State(store): State<Arc<Store>>) -> Response {
    Json(compute_agreement(&store.snapshot())).into_response()
}

fn jsonl(body: crate::error::Result<String>) -> Response {
    match body {
        Ok(text) => ([(header::CONTENT_TYPE, JSONL)], text).into_response(),
        Err(e) => e.into_response(),
    }
}

async fn export_corpus(State(store): State<Arc<Store>>) -> Response {
    jsonl(export_dataset(&store.snapshot()).and_then(|e| e.corpus_jsonl()))
}

async fn export_adjudication(State(store): State<Arc<Store>>) -> Response {
    jsonl(export_dataset(&store.snapshot()).and_then(|e| e.adjudication_jsonl()))
}

async fn hashtag_weights(State(store): State<Arc<Store>>) -> Json<Vec<WeightEntry>> {
    let pool = store.snapshot().hashtag_weights();
    Json(
        pool.top(usize::MAX)
            .into_iter()
            .map(|(hashtag, weight)| WeightEntry { hashtag, weight })
            .collect(),
    )
}

/// Serves the API until the listener fails.
pub async fn serve(store: Arc<Store>, addr: &str) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(addr = %listener.local_addr()?, "annotation service listening");
    axum::serve(listener, router(store)).await
}

//! HTTP service: `GET /models`, `POST /predict`.
//!
//! Errors are JSON `{"error": kind, "detail": message}`:
//! 400 malformed body, 404 unknown model id, 422 word not in sentence,
//! 502 extractor unreachable or misbehaving.

use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use featurescope::extract::{ExtractError, ExtractRequest, ExtractResponse, Extractor};
use featurescope::predict::{predict, PredictError, PredictRequest};
use serde::{Deserialize, Serialize};

use crate::registry::Registry;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    pub detail: String,
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    body: ErrorBody,
}

impl ApiError {
    fn new(status: StatusCode, error: &str, detail: impl Into<String>) -> Self {
        Self {
            status,
            body: ErrorBody {
                error: error.to_string(),
                detail: detail.into(),
            },
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

impl From<ExtractError> for ApiError {
    fn from(e: ExtractError) -> Self {
        match e {
            ExtractError::WordNotFound { .. } => Self::new(StatusCode::UNPROCESSABLE_ENTITY, "word_not_found", e.to_string()),
            ExtractError::Unreachable(_) => Self::new(StatusCode::BAD_GATEWAY, "extractor_unreachable", e.to_string()),
            ExtractError::Rejected { .. } | ExtractError::Malformed(_) => {
                Self::new(StatusCode::BAD_GATEWAY, "extractor_error", e.to_string())
            }
        }
    }
}

impl From<PredictError> for ApiError {
    fn from(e: PredictError) -> Self {
        match e {
            PredictError::Extract(x) => x.into(),
            PredictError::Model(m) => Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", m.to_string()),
        }
    }
}

fn parse_body<T: for<'de> Deserialize<'de>>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "bad_request", e.to_string()))
}

#[derive(Clone)]
pub struct AppState {
    pub registry: Arc<Registry>,
    pub extractor: Arc<dyn Extractor>,
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/models", get(list_models))
        .route("/predict", post(predict_handler))
        .with_state(state)
}

async fn list_models(State(state): State<AppState>) -> Response {
    Json(state.registry.list()).into_response()
}

async fn predict_handler(State(state): State<AppState>, body: Bytes) -> Result<Response, ApiError> {
    let req: PredictRequest = parse_body(&body)?;
    if state.registry.get(&req.model_id).is_none() {
        return Err(ApiError::new(
            StatusCode::NOT_FOUND,
            "unknown_model",
            format!("no model registered as `{}`", req.model_id),
        ));
    }
    let response = tokio::task::spawn_blocking(move || {
        let model = state.registry.get(&req.model_id).expect("checked above");
        predict(&req.model_id, model, state.extractor.as_ref(), &req.sentence, &req.word, req.occurrence)
    })
    .await
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))??;
    Ok(Json(response).into_response())
}

/// Serves any [`Extractor`] behind the sidecar's `POST /embed` contract.
pub fn extractor_router(extractor: Arc<dyn Extractor>) -> Router {
    Router::new().route("/embed", post(embed_handler)).with_state(extractor)
}

async fn embed_handler(State(extractor): State<Arc<dyn Extractor>>, body: Bytes) -> Result<Response, ApiError> {
    let req: ExtractRequest = parse_body(&body)?;
    let vector = tokio::task::spawn_blocking(move || extractor.embed(&req))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))??;
    Ok(Json(ExtractResponse {
        dim: vector.len(),
        vector,
    })
    .into_response())
}

/// Serves `app` on `listener` until Ctrl-C.
pub async fn serve(listener: tokio::net::TcpListener, app: Router) -> std::io::Result<()> {
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

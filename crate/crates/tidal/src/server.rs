use std::future::Future;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Query, Request, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::json;
use tidal_core::export::{export_csv, ExportConfig, ExportError};
use tidal_core::ingest::{ingest_envelope, IngestError};
use tidal_core::{Archive, Envelope, PatternTable};
use tokio::net::TcpListener;

/// Envelope bodies larger than this are refused with 413.
pub const MAX_BODY_BYTES: usize = 32 * 1024 * 1024;

#[derive(Clone)]
pub struct AppState {
    pub archive: Arc<Archive>,
    pub table: Arc<PatternTable>,
    pub token: Arc<str>,
    pub pseudonym_key: Option<Arc<[u8]>>,
}

struct ApiError {
    status: StatusCode,
    body: serde_json::Value,
}

impl ApiError {
    fn new(status: StatusCode, error: &str, message: impl ToString) -> Self {
        Self {
            status,
            body: json!({ "error": error, "message": message.to_string() }),
        }
    }

    fn internal(message: impl ToString) -> Self {
        tracing::error!(error = message.to_string(), "request failed");
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

pub fn router(state: AppState) -> Router {
    let protected = Router::new()
        .route("/api/v1/envelopes", post(post_envelope))
        .route("/api/v1/stats", get(get_stats))
        .route("/api/v1/sessions", post(post_session).get(get_sessions))
        .route("/api/v1/export.csv", get(get_export))
        .route_layer(middleware::from_fn_with_state(state.clone(), require_token));
    Router::new()
        .route("/api/v1/health", get(health))
        .merge(protected)
        .layer(DefaultBodyLimit::max(MAX_BODY_BYTES))
        .with_state(state)
}

/// Serves until `shutdown` resolves.
pub async fn serve(
    listener: TcpListener,
    state: AppState,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(state))
        .with_graceful_shutdown(shutdown)
        .await
}

fn constant_time_eq(a: &[u8], b: &[u8]) -> bool {
    a.len() == b.len() && a.iter().zip(b).fold(0u8, |acc, (x, y)| acc | (x ^ y)) == 0
}

fn bearer(headers: &HeaderMap) -> Option<&str> {
    let value = headers.get(header::AUTHORIZATION)?.to_str().ok()?;
    let (scheme, token) = value.split_once(' ')?;
    scheme.eq_ignore_ascii_case("bearer").then(|| token.trim())
}

async fn require_token(State(state): State<AppState>, req: Request, next: Next) -> Response {
    match bearer(req.headers()) {
        Some(t) if constant_time_eq(t.as_bytes(), state.token.as_bytes()) => next.run(req).await,
        _ => {
            let mut resp =
                ApiError::new(StatusCode::UNAUTHORIZED, "unauthorized", "missing or invalid bearer token")
                    .into_response();
            resp.headers_mut()
                .insert(header::WWW_AUTHENTICATE, "Bearer".parse().unwrap());
            resp
        }
    }
}

async fn blocking<T, F>(f: F) -> Result<T, ApiError>
where
    F: FnOnce() -> T + Send + 'static,
    T: Send + 'static,
{
    tokio::task::spawn_blocking(f).await.map_err(ApiError::internal)
}

async fn health() -> Json<serde_json::Value> {
    Json(json!({ "status": "ok", "version": env!("CARGO_PKG_VERSION") }))
}

async fn post_envelope(State(state): State<AppState>, body: Bytes) -> Result<Response, ApiError> {
    let env = Envelope::from_json_slice(&body)
        .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "invalid_envelope", e))?;
    let result = blocking(move || ingest_envelope(&env, &state.table, &state.archive)).await?;
    match result {
        Ok(receipt) => Ok(Json(receipt).into_response()),
        Err(IngestError::Invalid(e)) => Err(ApiError::new(StatusCode::BAD_REQUEST, "invalid_envelope", e)),
        Err(IngestError::Parse {
            envelope_id,
            kind,
            source,
            ..
        }) => Ok((
            StatusCode::UNPROCESSABLE_ENTITY,
            Json(json!({
                "quarantined": true,
                "envelope_id": envelope_id,
                "kind": kind,
                "error": source.to_string(),
            })),
        )
            .into_response()),
        Err(e) => Err(ApiError::internal(e)),
    }
}

async fn get_stats(State(state): State<AppState>) -> Json<tidal_core::Stats> {
    Json(state.archive.stats())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct NewSession {
    label: String,
    started_at: Option<i64>,
}

async fn post_session(State(state): State<AppState>, body: Bytes) -> Result<Response, ApiError> {
    let req: NewSession = serde_json::from_slice(&body)
        .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "invalid_session", e))?;
    let label = req.label.trim().to_string();
    if label.is_empty() {
        return Err(ApiError::new(StatusCode::BAD_REQUEST, "invalid_session", "label must not be empty"));
    }
    let started_at = req.started_at.unwrap_or_else(|| chrono::Utc::now().timestamp());
    let session = blocking(move || state.archive.begin_session(&label, started_at))
        .await?
        .map_err(ApiError::internal)?;
    Ok((StatusCode::CREATED, Json(session)).into_response())
}

async fn get_sessions(State(state): State<AppState>) -> Json<Vec<tidal_core::archive::Session>> {
    Json(state.archive.sessions())
}

#[derive(Deserialize)]
struct ExportQuery {
    #[serde(default)]
    pseudonymize: bool,
}

async fn get_export(
    State(state): State<AppState>,
    Query(q): Query<ExportQuery>,
) -> Result<Response, ApiError> {
    let config = ExportConfig {
        pseudonymize: q.pseudonymize,
        pseudonym_key: state.pseudonym_key.as_deref().map(<[u8]>::to_vec),
    };
    let result = blocking(move || {
        let mut out = Vec::new();
        export_csv(&state.archive, &config, &mut out).map(|_| out)
    })
    .await?;
    match result {
        Ok(csv) => Ok((
            [
                (header::CONTENT_TYPE, "text/csv; charset=utf-8"),
                (header::CONTENT_DISPOSITION, "attachment; filename=\"stories.csv\""),
            ],
            csv,
        )
            .into_response()),
        Err(e @ (ExportError::MissingKey | ExportError::KeyTooShort(_))) => {
            Err(ApiError::new(StatusCode::CONFLICT, "no_pseudonym_key", e))
        }
        Err(e) => Err(ApiError::internal(e)),
    }
}

// SPDX-License-Identifier: Apache-2.0

//! HTTP/1.1 JSON binding of the storage service under `/v1`.

use std::future::Future;
use std::io;
use std::net::SocketAddr;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Path, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post, put};
use axum::{Json, Router};
use chrono::{DateTime, TimeZone, Utc};
use relay_core::wire::{ErrorCode, TokenRequest, CHUNK_DIGEST_HEADER};
use relay_core::FileManifest;
use serde::Deserialize;
use tokio::net::TcpListener;
use tokio::sync::oneshot;
use tokio::task::JoinHandle;

use crate::auth::Principal;
use crate::error::ServiceError;
use crate::stats::StatsPeriod;
use crate::store::StorageService;

/// Largest accepted request body (one chunk or one manifest).
pub const MAX_BODY_BYTES: usize = 512 * 1024 * 1024;

type AppState = Arc<StorageService>;

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let status = match self.code() {
            ErrorCode::AuthRejected | ErrorCode::Unauthorized | ErrorCode::TokenExpired => {
                StatusCode::UNAUTHORIZED
            }
            ErrorCode::RateLimited => StatusCode::TOO_MANY_REQUESTS,
            ErrorCode::OwnerNotAuthorized => StatusCode::FORBIDDEN,
            ErrorCode::InvalidManifest
            | ErrorCode::ChunkDigestMismatch
            | ErrorCode::IntegrityFailure => StatusCode::UNPROCESSABLE_ENTITY,
            ErrorCode::QuotaExceeded => StatusCode::INSUFFICIENT_STORAGE,
            ErrorCode::UploadNotFound | ErrorCode::NotFound => StatusCode::NOT_FOUND,
            ErrorCode::ChunkConflict | ErrorCode::UploadIncomplete => StatusCode::CONFLICT,
            ErrorCode::ChunkIndexOutOfRange | ErrorCode::BadRequest => StatusCode::BAD_REQUEST,
            ErrorCode::Internal => StatusCode::INTERNAL_SERVER_ERROR,
        };
        if status == StatusCode::INTERNAL_SERVER_ERROR {
            tracing::error!(error = %self, "request failed");
        }
        (status, Json(self.body())).into_response()
    }
}

fn bearer(headers: &HeaderMap) -> Option<&str> {
    headers
        .get(header::AUTHORIZATION)?
        .to_str()
        .ok()?
        .strip_prefix("Bearer ")
        .map(str::trim)
}

fn principal(state: &AppState, headers: &HeaderMap) -> Result<Principal, ServiceError> {
    state.authorize(bearer(headers))
}

async fn blocking<T, F>(f: F) -> Result<T, ServiceError>
where
    F: FnOnce() -> Result<T, ServiceError> + Send + 'static,
    T: Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ServiceError::Io(io::Error::other(e)))?
}

async fn issue_token(
    State(state): State<AppState>,
    body: Bytes,
) -> Result<impl IntoResponse, ServiceError> {
    let req: TokenRequest = serde_json::from_slice(&body)
        .map_err(|e| ServiceError::BadRequest(format!("token request: {e}")))?;
    Ok(Json(state.issue_token(&req.device_id, &req.device_secret)?))
}

async fn init_upload(
    State(state): State<AppState>,
    headers: HeaderMap,
    body: Bytes,
) -> Result<impl IntoResponse, ServiceError> {
    let principal = principal(&state, &headers)?;
    let manifest: FileManifest = serde_json::from_slice(&body)
        .map_err(|e| ServiceError::BadRequest(format!("manifest: {e}")))?;
    let resp = blocking(move || state.init_upload(&principal, manifest)).await?;
    Ok((StatusCode::CREATED, Json(resp)))
}

async fn put_chunk(
    State(state): State<AppState>,
    Path((upload_id, index)): Path<(String, u64)>,
    headers: HeaderMap,
    body: Bytes,
) -> Result<impl IntoResponse, ServiceError> {
    let principal = principal(&state, &headers)?;
    let claimed = headers
        .get(CHUNK_DIGEST_HEADER)
        .ok_or_else(|| ServiceError::BadRequest("missing X-Chunk-Digest header".into()))?
        .to_str()
        .map_err(|_| ServiceError::BadRequest("X-Chunk-Digest is not ASCII".into()))?
        .to_owned();
    let ack = blocking(move || {
        state.put_chunk(&principal, &upload_id, index, Some(&claimed), &body)
    })
    .await?;
    Ok(Json(ack))
}

async fn complete_upload(
    State(state): State<AppState>,
    Path(upload_id): Path<String>,
    headers: HeaderMap,
) -> Result<impl IntoResponse, ServiceError> {
    let principal = principal(&state, &headers)?;
    let receipt = blocking(move || state.complete_upload(&principal, &upload_id)).await?;
    Ok(Json(receipt))
}

async fn get_object(
    State(state): State<AppState>,
    Path((owner, relative_path)): Path<(String, String)>,
    headers: HeaderMap,
) -> Result<impl IntoResponse, ServiceError> {
    let principal = principal(&state, &headers)?;
    let bytes = blocking(move || state.get_object(&principal, &owner, &relative_path)).await?;
    Ok((
        [(header::CONTENT_TYPE, "application/octet-stream")],
        bytes,
    ))
}

#[derive(Debug, Deserialize)]
struct StatsQuery {
    from: Option<String>,
    to: Option<String>,
}

/// RFC 3339 or integer Unix seconds.
pub fn parse_timestamp(s: &str) -> Option<DateTime<Utc>> {
    if let Ok(secs) = s.parse::<i64>() {
        return Utc.timestamp_opt(secs, 0).single();
    }
    DateTime::parse_from_rfc3339(s).ok().map(|t| t.with_timezone(&Utc))
}

async fn stats(
    State(state): State<AppState>,
    Query(q): Query<StatsQuery>,
) -> Result<impl IntoResponse, ServiceError> {
    let parse = |v: Option<String>, name: &str| -> Result<_, ServiceError> {
        v.map(|s| {
            parse_timestamp(&s)
                .ok_or_else(|| ServiceError::BadRequest(format!("{name}: bad timestamp {s:?}")))
        })
        .transpose()
    };
    let period = StatsPeriod {
        from: parse(q.from, "from")?,
        to: parse(q.to, "to")?,
    };
    let report = blocking(move || state.stats(period)).await?;
    Ok(Json(report))
}

async fn stats_monthly(State(state): State<AppState>) -> Result<impl IntoResponse, ServiceError> {
    let series = blocking(move || state.cumulative_stats()).await?;
    Ok(Json(series))
}

pub fn router(service: Arc<StorageService>) -> Router {
    Router::new()
        .route("/v1/auth/token", post(issue_token))
        .route("/v1/uploads", post(init_upload))
        .route("/v1/uploads/{upload_id}/chunks/{index}", put(put_chunk))
        .route("/v1/uploads/{upload_id}/complete", post(complete_upload))
        .route("/v1/objects/{owner}/{*relative_path}", get(get_object))
        .route("/v1/stats", get(stats))
        .route("/v1/stats/monthly", get(stats_monthly))
        .layer(DefaultBodyLimit::max(MAX_BODY_BYTES))
        .with_state(service)
}

pub async fn serve<F>(listener: TcpListener, service: Arc<StorageService>, shutdown: F) -> io::Result<()>
where
    F: Future<Output = ()> + Send + 'static,
{
    axum::serve(listener, router(service))
        .with_graceful_shutdown(shutdown)
        .await
}

/// A server running on a background task.
pub struct ServerHandle {
    pub addr: SocketAddr,
    pub service: Arc<StorageService>,
    shutdown: Option<oneshot::Sender<()>>,
    task: Option<JoinHandle<io::Result<()>>>,
}

impl ServerHandle {
    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub async fn shutdown(mut self) -> io::Result<()> {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        match self.task.take() {
            Some(task) => task.await.map_err(io::Error::other)?,
            None => Ok(()),
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        if let Some(task) = self.task.take() {
            task.abort();
        }
    }
}

/// Bind `addr` and serve in the background.
pub async fn spawn_server(service: Arc<StorageService>, addr: SocketAddr) -> io::Result<ServerHandle> {
    let listener = TcpListener::bind(addr).await?;
    let addr = listener.local_addr()?;
    let (tx, rx) = oneshot::channel();
    let task = tokio::spawn(serve(listener, service.clone(), async {
        let _ = rx.await;
    }));
    Ok(ServerHandle {
        addr,
        service,
        shutdown: Some(tx),
        task: Some(task),
    })
}

// SPDX-License-Identifier: Apache-2.0

//! HTTP client for the storage service with bearer-token management.

use std::sync::atomic::{AtomicU64, Ordering};
use std::time::{Duration, Instant};

use chrono::{DateTime, Utc};
use relay_core::wire::{
    ChunkAck, CommitReceipt, ErrorBody, ErrorCode, InitUploadResponse, TokenRequest, TokenResponse,
    CHUNK_DIGEST_HEADER,
};
use relay_core::{ContentDigest, DeviceCredential, FileManifest};
use reqwest::{Response, Url};
use serde::de::DeserializeOwned;
use tokio::sync::Mutex;

use crate::error::ClientError;

/// Fraction of a token's lifetime after which it is refreshed.
pub const REFRESH_FRACTION: f64 = 0.8;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SessionToken {
    pub token: String,
    pub expires_at: DateTime<Utc>,
    pub device_id: String,
}

#[derive(Debug)]
struct CachedToken {
    session: SessionToken,
    refresh_at: Instant,
}

pub struct ServiceClient {
    http: reqwest::Client,
    base: Url,
    credential: DeviceCredential,
    token: Mutex<Option<CachedToken>>,
    refresh_fraction: f64,
    reauthentications: AtomicU64,
}

impl ServiceClient {
    pub fn new(base_url: &str, credential: DeviceCredential) -> Result<Self, ClientError> {
        Self::with_timeout(base_url, credential, Duration::from_secs(300))
    }

    pub fn with_timeout(
        base_url: &str,
        credential: DeviceCredential,
        request_timeout: Duration,
    ) -> Result<Self, ClientError> {
        let base = Url::parse(base_url)
            .map_err(|e| ClientError::Protocol(format!("server url {base_url:?}: {e}")))?;
        let http = reqwest::Client::builder()
            .connect_timeout(Duration::from_secs(5))
            .timeout(request_timeout)
            .tcp_nodelay(true)
            .build()
            .map_err(|e| ClientError::Protocol(e.to_string()))?;
        Ok(Self {
            http,
            base,
            credential,
            token: Mutex::new(None),
            refresh_fraction: REFRESH_FRACTION,
            reauthentications: AtomicU64::new(0),
        })
    }

    /// Refresh after this fraction of the token lifetime instead of the
    /// default. Values above 1 let tokens run into expiry.
    pub fn with_refresh_fraction(mut self, fraction: f64) -> Self {
        self.refresh_fraction = fraction.max(0.0);
        self
    }

    /// Times a rejected token forced a fresh authentication.
    pub fn reauthentications(&self) -> u64 {
        self.reauthentications.load(Ordering::Relaxed)
    }

    pub fn credential(&self) -> &DeviceCredential {
        &self.credential
    }

    fn url(&self, segments: &[&str]) -> Url {
        let mut url = self.base.clone();
        url.path_segments_mut()
            .expect("http base url")
            .pop_if_empty()
            .extend(segments);
        url
    }

    /// Exchange the device credential for a fresh session token.
    pub async fn authenticate(&self) -> Result<SessionToken, ClientError> {
        let mut slot = self.token.lock().await;
        self.authenticate_locked(&mut slot).await
    }

    async fn authenticate_locked(&self, slot: &mut Option<CachedToken>) -> Result<SessionToken, ClientError> {
        let resp = self
            .http
            .post(self.url(&["v1", "auth", "token"]))
            .json(&TokenRequest {
                device_id: self.credential.device_id.clone(),
                device_secret: self.credential.device_secret.clone(),
            })
            .send()
            .await?;
        let issued: TokenResponse = decode(resp).await?;
        let lifetime = (issued.expires_at - Utc::now()).to_std().unwrap_or_default();
        let session = SessionToken {
            token: issued.token,
            expires_at: issued.expires_at,
            device_id: self.credential.device_id.clone(),
        };
        tracing::debug!(expires_at = %session.expires_at, "session token issued");
        *slot = Some(CachedToken {
            session: session.clone(),
            refresh_at: Instant::now() + lifetime.mul_f64(self.refresh_fraction),
        });
        Ok(session)
    }

    /// Current token, refreshed once 80% of its lifetime has passed.
    pub async fn session(&self) -> Result<SessionToken, ClientError> {
        let mut slot = self.token.lock().await;
        match slot.as_ref() {
            Some(cached) if Instant::now() < cached.refresh_at => Ok(cached.session.clone()),
            _ => self.authenticate_locked(&mut slot).await,
        }
    }

    async fn invalidate(&self, stale: &str) {
        let mut slot = self.token.lock().await;
        if slot.as_ref().is_some_and(|c| c.session.token == stale) {
            *slot = None;
        }
    }

    /// Run `call` with a valid token, re-authenticating once if the service
    /// rejects the token (expired or unknown after a service restart).
    async fn authorized<T, F, Fut>(&self, call: F) -> Result<T, ClientError>
    where
        F: Fn(String) -> Fut,
        Fut: std::future::Future<Output = Result<T, ClientError>>,
    {
        let mut reauths = 0;
        loop {
            let token = self.session().await?.token;
            match call(token.clone()).await {
                Err(ClientError::TokenRejected(code)) if reauths < 2 => {
                    tracing::info!(%code, "token rejected, re-authenticating");
                    self.invalidate(&token).await;
                    self.reauthentications.fetch_add(1, Ordering::Relaxed);
                    reauths += 1;
                }
                other => return other,
            }
        }
    }

    pub async fn init_upload(&self, manifest: &FileManifest) -> Result<String, ClientError> {
        let body = manifest.to_canonical_json();
        let resp: InitUploadResponse = self
            .authorized(|token| {
                let req = self
                    .http
                    .post(self.url(&["v1", "uploads"]))
                    .bearer_auth(token)
                    .header(reqwest::header::CONTENT_TYPE, "application/json")
                    .body(body.clone());
                async move { decode(req.send().await?).await }
            })
            .await?;
        Ok(resp.upload_id)
    }

    pub async fn put_chunk(
        &self,
        upload_id: &str,
        index: u64,
        digest: &ContentDigest,
        payload: Vec<u8>,
    ) -> Result<ChunkAck, ClientError> {
        let url = self.url(&["v1", "uploads", upload_id, "chunks", &index.to_string()]);
        // cheap clones for re-sends after re-authentication
        let payload = bytes::Bytes::from(payload);
        self.authorized(|token| {
            let req = self
                .http
                .put(url.clone())
                .bearer_auth(token)
                .header(CHUNK_DIGEST_HEADER, digest.as_hex())
                .body(payload.clone());
            async move { decode(req.send().await?).await }
        })
        .await
    }

    pub async fn complete_upload(&self, upload_id: &str) -> Result<CommitReceipt, ClientError> {
        let url = self.url(&["v1", "uploads", upload_id, "complete"]);
        self.authorized(|token| {
            let req = self.http.post(url.clone()).bearer_auth(token);
            async move { decode(req.send().await?).await }
        })
        .await
    }

    pub async fn get_object(&self, owner: &str, relative_path: &str) -> Result<Vec<u8>, ClientError> {
        let mut segments = vec!["v1", "objects", owner];
        segments.extend(relative_path.split('/'));
        let url = self.url(&segments);
        self.authorized(|token| {
            let req = self.http.get(url.clone()).bearer_auth(token);
            async move {
                let resp = req.send().await?;
                if resp.status().is_success() {
                    Ok(resp.bytes().await?.to_vec())
                } else {
                    Err(error_of(resp).await)
                }
            }
        })
        .await
    }
}

async fn decode<T: DeserializeOwned>(resp: Response) -> Result<T, ClientError> {
    if resp.status().is_success() {
        Ok(resp.json().await?)
    } else {
        Err(error_of(resp).await)
    }
}

async fn error_of(resp: Response) -> ClientError {
    let status = resp.status();
    let body = match resp.bytes().await {
        Ok(b) => b,
        Err(e) => return e.into(),
    };
    match serde_json::from_slice::<ErrorBody>(&body) {
        Ok(err) => match err.code {
            ErrorCode::AuthRejected => ClientError::AuthRejected,
            ErrorCode::RateLimited => ClientError::RateLimited,
            ErrorCode::Unauthorized | ErrorCode::TokenExpired => ClientError::TokenRejected(err.code),
            code => ClientError::Api {
                code,
                message: err.message,
                detail: err.detail,
            },
        },
        Err(_) if status.is_server_error() => ClientError::Network(format!("status {status}")),
        Err(_) => ClientError::Protocol(format!(
            "status {status}: {}",
            String::from_utf8_lossy(&body[..body.len().min(200)])
        )),
    }
}

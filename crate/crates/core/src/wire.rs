// SPDX-License-Identifier: Apache-2.0

//! Request and response bodies of the `/v1` HTTP API.

use std::fmt;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::digest::ContentDigest;

pub const CHUNK_DIGEST_HEADER: &str = "x-chunk-digest";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenRequest {
    pub device_id: String,
    pub device_secret: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenResponse {
    pub token: String,
    pub expires_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InitUploadResponse {
    pub upload_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChunkAck {
    pub index: u64,
    pub digest: ContentDigest,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommitReceipt {
    pub object_id: String,
    pub whole_digest: ContentDigest,
}

/// Stable machine-readable error codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ErrorCode {
    AuthRejected,
    RateLimited,
    Unauthorized,
    TokenExpired,
    OwnerNotAuthorized,
    InvalidManifest,
    QuotaExceeded,
    UploadNotFound,
    ChunkIndexOutOfRange,
    ChunkDigestMismatch,
    ChunkConflict,
    UploadIncomplete,
    IntegrityFailure,
    NotFound,
    BadRequest,
    Internal,
}

impl ErrorCode {
    pub fn as_str(self) -> &'static str {
        match self {
            ErrorCode::AuthRejected => "AUTH_REJECTED",
            ErrorCode::RateLimited => "RATE_LIMITED",
            ErrorCode::Unauthorized => "UNAUTHORIZED",
            ErrorCode::TokenExpired => "TOKEN_EXPIRED",
            ErrorCode::OwnerNotAuthorized => "OWNER_NOT_AUTHORIZED",
            ErrorCode::InvalidManifest => "INVALID_MANIFEST",
            ErrorCode::QuotaExceeded => "QUOTA_EXCEEDED",
            ErrorCode::UploadNotFound => "UPLOAD_NOT_FOUND",
            ErrorCode::ChunkIndexOutOfRange => "CHUNK_INDEX_OUT_OF_RANGE",
            ErrorCode::ChunkDigestMismatch => "CHUNK_DIGEST_MISMATCH",
            ErrorCode::ChunkConflict => "CHUNK_CONFLICT",
            ErrorCode::UploadIncomplete => "UPLOAD_INCOMPLETE",
            ErrorCode::IntegrityFailure => "INTEGRITY_FAILURE",
            ErrorCode::NotFound => "NOT_FOUND",
            ErrorCode::BadRequest => "BAD_REQUEST",
            ErrorCode::Internal => "INTERNAL",
        }
    }
}

impl fmt::Display for ErrorCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Uniform error body.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: ErrorCode,
    pub message: String,
    #[serde(default)]
    pub detail: serde_json::Value,
}

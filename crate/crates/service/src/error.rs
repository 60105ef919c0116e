// SPDX-License-Identifier: Apache-2.0

use relay_core::wire::{ErrorBody, ErrorCode};
use relay_core::ManifestError;
use serde_json::json;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("invalid device credentials")]
    AuthRejected,
    #[error("too many failed authentication attempts")]
    RateLimited,
    #[error("missing or unknown bearer token")]
    Unauthorized,
    #[error("bearer token expired")]
    TokenExpired,
    #[error("device is not registered for user {0:?}")]
    OwnerNotAuthorized(String),
    #[error("invalid manifest: {0}")]
    InvalidManifest(#[from] ManifestError),
    #[error("quota exceeded for {user:?}: requested {requested} bytes, {available} available")]
    QuotaExceeded {
        user: String,
        requested: u64,
        available: u64,
    },
    #[error("unknown upload session {0:?}")]
    UploadNotFound(String),
    #[error("chunk index {index} out of range for {chunk_count} chunks")]
    ChunkIndexOutOfRange { index: u64, chunk_count: u64 },
    #[error("chunk {index} does not match its manifest record")]
    ChunkDigestMismatch { index: u64 },
    #[error("chunk {index} already acknowledged with different content")]
    ChunkConflict { index: u64 },
    #[error("upload incomplete, pending chunks {pending:?}")]
    UploadIncomplete { pending: Vec<u64> },
    #[error("reassembled digest {actual} does not match manifest {expected}")]
    IntegrityFailure { expected: String, actual: String },
    #[error("object not found")]
    NotFound,
    #[error("bad request: {0}")]
    BadRequest(String),
    #[error("data root {0} is locked by another instance")]
    DataRootLocked(String),
    #[error("storage io: {0}")]
    Io(#[from] std::io::Error),
    #[error("corrupt ledger at line {line}: {message}")]
    CorruptLedger { line: usize, message: String },
}

impl ServiceError {
    pub fn code(&self) -> ErrorCode {
        match self {
            ServiceError::AuthRejected => ErrorCode::AuthRejected,
            ServiceError::RateLimited => ErrorCode::RateLimited,
            ServiceError::Unauthorized => ErrorCode::Unauthorized,
            ServiceError::TokenExpired => ErrorCode::TokenExpired,
            ServiceError::OwnerNotAuthorized(_) => ErrorCode::OwnerNotAuthorized,
            ServiceError::InvalidManifest(_) => ErrorCode::InvalidManifest,
            ServiceError::QuotaExceeded { .. } => ErrorCode::QuotaExceeded,
            ServiceError::UploadNotFound(_) => ErrorCode::UploadNotFound,
            ServiceError::ChunkIndexOutOfRange { .. } => ErrorCode::ChunkIndexOutOfRange,
            ServiceError::ChunkDigestMismatch { .. } => ErrorCode::ChunkDigestMismatch,
            ServiceError::ChunkConflict { .. } => ErrorCode::ChunkConflict,
            ServiceError::UploadIncomplete { .. } => ErrorCode::UploadIncomplete,
            ServiceError::IntegrityFailure { .. } => ErrorCode::IntegrityFailure,
            ServiceError::NotFound => ErrorCode::NotFound,
            ServiceError::BadRequest(_) => ErrorCode::BadRequest,
            ServiceError::DataRootLocked(_)
            | ServiceError::Io(_)
            | ServiceError::CorruptLedger { .. } => ErrorCode::Internal,
        }
    }

    pub fn body(&self) -> ErrorBody {
        let detail = match self {
            ServiceError::InvalidManifest(e) => json!({ "invariant": e.invariant() }),
            ServiceError::QuotaExceeded {
                requested,
                available,
                ..
            } => json!({ "requested": requested, "available": available }),
            ServiceError::ChunkIndexOutOfRange { index, chunk_count } => {
                json!({ "index": index, "chunk_count": chunk_count })
            }
            ServiceError::ChunkDigestMismatch { index } | ServiceError::ChunkConflict { index } => {
                json!({ "index": index })
            }
            ServiceError::UploadIncomplete { pending } => json!({ "pending": pending }),
            ServiceError::IntegrityFailure { expected, actual } => {
                json!({ "expected": expected, "actual": actual })
            }
            _ => serde_json::Value::Null,
        };
        let message = match self {
            // internal details stay in the server log
            ServiceError::Io(_) | ServiceError::CorruptLedger { .. } => {
                "internal storage error".to_owned()
            }
            other => other.to_string(),
        };
        ErrorBody {
            code: self.code(),
            message,
            detail,
        }
    }
}

pub type Result<T, E = ServiceError> = std::result::Result<T, E>;

// SPDX-License-Identifier: Apache-2.0

use relay_core::wire::ErrorCode;
use relay_core::{BuildManifestError, ResumeError, StateError};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum JournalError {
    #[error("journal io: {0}")]
    Io(#[from] std::io::Error),
    #[error("journal corrupt at line {line} (not the final line; manual intervention required): {message}")]
    Corrupt { line: usize, message: String },
}

/// Failure talking to the storage service.
#[derive(Debug, Error)]
pub enum ClientError {
    #[error("device credentials rejected")]
    AuthRejected,
    #[error("authentication rate limited")]
    RateLimited,
    #[error("session token rejected ({0})")]
    TokenRejected(ErrorCode),
    #[error("service unreachable: {0}")]
    Network(String),
    #[error("{code}: {message}")]
    Api {
        code: ErrorCode,
        message: String,
        detail: serde_json::Value,
    },
    #[error("unexpected response: {0}")]
    Protocol(String),
}

impl ClientError {
    pub fn code(&self) -> Option<ErrorCode> {
        match self {
            ClientError::Api { code, .. } => Some(*code),
            ClientError::TokenRejected(code) => Some(*code),
            ClientError::AuthRejected => Some(ErrorCode::AuthRejected),
            ClientError::RateLimited => Some(ErrorCode::RateLimited),
            _ => None,
        }
    }

    /// Worth retrying the same request after a backoff.
    pub fn is_transient(&self) -> bool {
        match self {
            ClientError::Network(_) | ClientError::RateLimited => true,
            ClientError::Api { code, .. } => matches!(code, ErrorCode::Internal),
            _ => false,
        }
    }
}

impl From<reqwest::Error> for ClientError {
    fn from(e: reqwest::Error) -> Self {
        if e.is_decode() {
            ClientError::Protocol(e.to_string())
        } else {
            ClientError::Network(e.to_string())
        }
    }
}

#[derive(Debug, Error)]
pub enum TransferError {
    #[error(transparent)]
    Client(#[from] ClientError),
    #[error(transparent)]
    Journal(#[from] JournalError),
    #[error(transparent)]
    State(#[from] StateError),
    #[error(transparent)]
    Resume(#[from] ResumeError),
    #[error("reading source: {0}")]
    Source(#[from] std::io::Error),
    #[error("owner {0:?} is not registered for this device")]
    UnregisteredOwner(String),
    #[error("chunk {index} rejected {attempts} times")]
    ChunkRetriesExhausted { index: u64, attempts: u32 },
    #[error("service lost the upload session")]
    SessionLost,
    #[error("transfer cancelled")]
    Cancelled,
}

impl TransferError {
    /// Terminal failures are not retried by the agent loop.
    pub fn is_terminal(&self) -> bool {
        match self {
            TransferError::Client(c) => matches!(
                c.code(),
                Some(
                    ErrorCode::QuotaExceeded
                        | ErrorCode::OwnerNotAuthorized
                        | ErrorCode::InvalidManifest
                        | ErrorCode::IntegrityFailure
                        | ErrorCode::AuthRejected
                )
            ),
            TransferError::UnregisteredOwner(_) | TransferError::State(_) | TransferError::Resume(_) => true,
            _ => false,
        }
    }
}

#[derive(Debug, Error)]
pub enum AgentError {
    #[error(transparent)]
    Journal(#[from] JournalError),
    #[error("staging root {path}: {source}")]
    Staging {
        path: String,
        source: std::io::Error,
    },
    #[error(transparent)]
    Manifest(#[from] BuildManifestError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

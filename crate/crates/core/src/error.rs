// SPDX-License-Identifier: Apache-2.0

use thiserror::Error;

use crate::state::{TransferEventKind, TransferPhase};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DigestParseError {
    #[error("digest must be 64 hex characters, got {0}")]
    Length(usize),
    #[error("digest contains non lowercase-hex character {0:?}")]
    Character(char),
}

/// A violated manifest invariant. The variant names the invariant.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ManifestError {
    #[error("chunk_size must be at least 1")]
    ZeroChunkSize,
    #[error("owner must be a non-empty single path component, got {0:?}")]
    InvalidOwner(String),
    #[error("relative_path {0:?} must be a relative path without '.', '..' or empty components")]
    InvalidRelativePath(String),
    #[error("file_id must be 32 lowercase hex characters, got {0:?}")]
    InvalidFileId(String),
    #[error("chunk count {actual} != ceil(total_size / chunk_size) = {expected}")]
    ChunkCount { expected: u64, actual: u64 },
    #[error("chunk at position {position} has index {index}")]
    ChunkIndex { position: u64, index: u64 },
    #[error("chunk {index} offset {offset} != index * chunk_size = {expected}")]
    ChunkOffset {
        index: u64,
        offset: u64,
        expected: u64,
    },
    #[error("chunk {index} length {length} invalid (expected {expected})")]
    ChunkLength {
        index: u64,
        length: u64,
        expected: u64,
    },
    #[error("sum of chunk lengths {sum} != total_size {total_size}")]
    ChunkLengthSum { sum: u64, total_size: u64 },
}

impl ManifestError {
    /// Stable name of the invariant, used in API error details.
    pub fn invariant(&self) -> &'static str {
        match self {
            Self::ZeroChunkSize => "chunk_size",
            Self::InvalidOwner(_) => "owner",
            Self::InvalidRelativePath(_) => "relative_path",
            Self::InvalidFileId(_) => "file_id",
            Self::ChunkCount { .. } => "chunk_count",
            Self::ChunkIndex { .. } => "chunk_index",
            Self::ChunkOffset { .. } => "chunk_offset",
            Self::ChunkLength { .. } => "chunk_length",
            Self::ChunkLengthSum { .. } => "chunk_length_sum",
        }
    }
}

#[derive(Debug, Error)]
pub enum BuildManifestError {
    #[error(transparent)]
    Manifest(#[from] ManifestError),
    #[error("reading source: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ResumeError {
    #[error("acked index {index} out of range for {chunk_count} chunks")]
    IndexOutOfRange { index: u64, chunk_count: u64 },
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum StateError {
    #[error("illegal transition: {event:?} in phase {phase:?}")]
    IllegalTransition {
        phase: TransferPhase,
        event: TransferEventKind,
    },
    #[error("chunk index {index} out of range for {chunk_count} chunks")]
    ChunkOutOfRange { index: u64, chunk_count: u64 },
    #[error("not all chunks acked, pending {pending:?}")]
    Incomplete { pending: Vec<u64> },
}

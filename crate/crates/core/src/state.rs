// SPDX-License-Identifier: Apache-2.0

//! Per-file transfer lifecycle.
//!
//! Legal edges:
//!
//! ```text
//! Discovered -> Stable -> Manifested -> Uploading -> Verifying -> Committed
//!                              |            |            |
//!                              +------------+------------+--> Failed -> Uploading
//! ```

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::StateError;
use crate::resume::pending_indices;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TransferPhase {
    Discovered,
    Stable,
    Manifested,
    Uploading,
    Verifying,
    Committed,
    Failed,
}

impl TransferPhase {
    /// Phases in which the agent owns an unfinished transfer.
    pub fn is_in_flight(self) -> bool {
        matches!(
            self,
            TransferPhase::Manifested | TransferPhase::Uploading | TransferPhase::Verifying
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TransferEvent {
    StabilityConfirmed,
    ManifestBuilt { chunk_count: u64 },
    /// The service accepted the upload session (first attempt or retry).
    UploadStarted,
    ChunkAcked(u64),
    AllChunksAcked,
    CommitConfirmed,
    Error(String),
}

/// Payload-free event tag, carried in errors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TransferEventKind {
    StabilityConfirmed,
    ManifestBuilt,
    UploadStarted,
    ChunkAcked,
    AllChunksAcked,
    CommitConfirmed,
    Error,
}

impl TransferEvent {
    pub fn kind(&self) -> TransferEventKind {
        match self {
            TransferEvent::StabilityConfirmed => TransferEventKind::StabilityConfirmed,
            TransferEvent::ManifestBuilt { .. } => TransferEventKind::ManifestBuilt,
            TransferEvent::UploadStarted => TransferEventKind::UploadStarted,
            TransferEvent::ChunkAcked(_) => TransferEventKind::ChunkAcked,
            TransferEvent::AllChunksAcked => TransferEventKind::AllChunksAcked,
            TransferEvent::CommitConfirmed => TransferEventKind::CommitConfirmed,
            TransferEvent::Error(_) => TransferEventKind::Error,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransferState {
    pub phase: TransferPhase,
    pub chunk_count: u64,
    pub acked_chunks: BTreeSet<u64>,
    pub attempt_count: u32,
    pub last_error: Option<String>,
}

impl Default for TransferState {
    fn default() -> Self {
        Self::discovered()
    }
}

impl TransferState {
    pub fn discovered() -> Self {
        Self {
            phase: TransferPhase::Discovered,
            chunk_count: 0,
            acked_chunks: BTreeSet::new(),
            attempt_count: 0,
            last_error: None,
        }
    }

    /// State right after manifest construction, for callers that discover
    /// and manifest in one step.
    pub fn manifested(chunk_count: u64) -> Self {
        Self {
            phase: TransferPhase::Manifested,
            chunk_count,
            ..Self::discovered()
        }
    }

    pub fn pending(&self) -> Vec<u64> {
        pending_indices(self.chunk_count, &self.acked_chunks).unwrap_or_default()
    }

    pub fn is_fully_acked(&self) -> bool {
        self.acked_chunks.len() as u64 == self.chunk_count
    }

    /// Apply `event`, returning the successor state. Illegal pairs are errors.
    pub fn advance(&self, event: TransferEvent) -> Result<TransferState, StateError> {
        use TransferPhase::*;

        let illegal = || StateError::IllegalTransition {
            phase: self.phase,
            event: event.kind(),
        };
        let mut next = self.clone();
        match (self.phase, &event) {
            (Discovered, TransferEvent::StabilityConfirmed) => next.phase = Stable,
            (Stable, TransferEvent::ManifestBuilt { chunk_count }) => {
                next.phase = Manifested;
                next.chunk_count = *chunk_count;
            }
            (Manifested, TransferEvent::UploadStarted) => {
                next.phase = Uploading;
                next.attempt_count += 1;
            }
            (Failed, TransferEvent::UploadStarted) => {
                next.phase = Uploading;
                next.attempt_count += 1;
                next.last_error = None;
            }
            (Uploading, TransferEvent::ChunkAcked(index)) => {
                if *index >= self.chunk_count {
                    return Err(StateError::ChunkOutOfRange {
                        index: *index,
                        chunk_count: self.chunk_count,
                    });
                }
                next.acked_chunks.insert(*index);
            }
            (Uploading, TransferEvent::AllChunksAcked) => {
                if !self.is_fully_acked() {
                    return Err(StateError::Incomplete {
                        pending: self.pending(),
                    });
                }
                next.phase = Verifying;
            }
            (Verifying, TransferEvent::CommitConfirmed) => {
                debug_assert!(self.is_fully_acked());
                next.phase = Committed;
            }
            (Manifested | Uploading | Verifying, TransferEvent::Error(message)) => {
                next.phase = Failed;
                next.last_error = Some(message.clone());
            }
            _ => return Err(illegal()),
        }
        Ok(next)
    }
}

/// Free-function form of [`TransferState::advance`].
pub fn advance_state(state: &TransferState, event: TransferEvent) -> Result<TransferState, StateError> {
    state.advance(event)
}

// SPDX-License-Identifier: Apache-2.0

//! Relay agent: watches a staging volume laid out as one directory per
//! user, and moves every settled file into that user's namespace on the
//! storage service with journaled, resumable, parallel chunk uploads.

pub mod agent;
pub mod client;
pub mod error;
pub mod journal;
pub mod reconcile;
pub mod retry;
pub mod scan;
pub mod upload;

pub use agent::{category_for, Agent, AgentConfig, RunSummary, DEFAULT_MAX_ACTIVE_FILES, DEFAULT_STABILITY_WINDOW};
pub use client::{ServiceClient, SessionToken, REFRESH_FRACTION};
pub use error::{AgentError, ClientError, JournalError, TransferError};
pub use journal::{Journal, JournalEntry, RecoveryReport, SourceFingerprint};
pub use reconcile::{reconcile, ReconcileOutcome, Resumable};
pub use retry::RetryPolicy;
pub use scan::{archive_source, scan_staging, RoutingWarning, ScanOutcome, Scanner, StagedFile, ARCHIVE_DIR};
pub use upload::{TransferMetrics, Uploader, DEFAULT_PARALLELISM};

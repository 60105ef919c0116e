// SPDX-License-Identifier: Apache-2.0

//! Startup reconciliation of the journal against the staging volume.

use std::path::{Path, PathBuf};

use relay_core::{TransferEvent, TransferPhase};

use crate::error::JournalError;
use crate::journal::{Journal, JournalEntry, SourceFingerprint};
use crate::scan::archive_source;

/// A transfer to pick up again, with the staged file it reads from.
#[derive(Debug, Clone)]
pub struct Resumable {
    pub entry: JournalEntry,
    pub source: PathBuf,
}

#[derive(Debug, Default)]
pub struct ReconcileOutcome {
    /// In-flight or retryable transfers whose source is unchanged.
    pub resumed: Vec<Resumable>,
    /// Transfers marked Failed because their source vanished or changed.
    pub abandoned: Vec<JournalEntry>,
    /// Committed sources still in staging, now moved to the archive.
    pub archived: Vec<PathBuf>,
}

pub fn staged_path(root: &Path, entry: &JournalEntry) -> PathBuf {
    root.join(&entry.manifest.owner).join(&entry.manifest.relative_path)
}

/// Decide what happens to every journaled transfer. Call once at startup,
/// before the first scan.
pub fn reconcile(journal: &Journal, staging_root: &Path) -> Result<ReconcileOutcome, JournalError> {
    let mut out = ReconcileOutcome::default();
    for entry in journal.entries() {
        let source = staged_path(staging_root, &entry);
        let unchanged = SourceFingerprint::read(&source).is_ok_and(|fp| fp == entry.source);
        // a newer transfer of the same path supersedes this one
        let superseded = journal
            .latest_for_path(&entry.manifest.owner, &entry.manifest.relative_path)
            .is_some_and(|latest| latest.file_id != entry.file_id);

        match entry.phase {
            TransferPhase::Committed => {
                if unchanged && !superseded {
                    let archived = archive_source(staging_root, &entry.manifest.owner, &entry.manifest.relative_path, &entry.file_id)?;
                    tracing::info!(path = %archived.display(), "archived already-committed source");
                    out.archived.push(archived);
                }
            }
            phase if phase.is_in_flight() || phase == TransferPhase::Failed => {
                if unchanged && !superseded {
                    if phase == TransferPhase::Failed && entry.terminal {
                        continue;
                    }
                    out.resumed.push(Resumable { entry, source });
                } else if phase != TransferPhase::Failed {
                    let why = if superseded {
                        "superseded by a newer transfer"
                    } else if source.exists() {
                        "source modified"
                    } else {
                        "source missing"
                    };
                    let mut failed = entry.clone();
                    let state = entry
                        .state()
                        .advance(TransferEvent::Error(why.into()))
                        .expect("in-flight phases accept errors");
                    failed.set_state(&state);
                    failed.terminal = true;
                    journal.append(&failed)?;
                    tracing::warn!(file_id = %failed.file_id, path = %source.display(), why, "abandoning transfer");
                    out.abandoned.push(failed);
                }
            }
            // Discovered and Stable are never journaled
            _ => {}
        }
    }
    Ok(out)
}

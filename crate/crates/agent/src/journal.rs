// SPDX-License-Identifier: Apache-2.0

//! Append-only transfer journal.
//!
//! Each line is a complete JSON snapshot of one file's transfer (manifest
//! inline), so replaying the file and keeping the last line per `file_id`
//! reconstructs every transfer's state. Lines that change the phase are
//! fsynced; chunk acks within a phase are written but not synced, which at
//! worst costs a re-send of an already-acknowledged chunk after power loss.

use std::collections::{BTreeSet, HashMap};
use std::fs::{File, OpenOptions};
use std::io::{self, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::UNIX_EPOCH;

use chrono::{DateTime, Utc};
use relay_core::{FileManifest, TransferPhase, TransferState};
use serde::{Deserialize, Serialize};

use crate::error::JournalError;

/// Size and modification time of a staged file when it was manifested.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SourceFingerprint {
    pub size: u64,
    pub mtime_ns: i64,
}

impl SourceFingerprint {
    pub fn of(meta: &std::fs::Metadata) -> Self {
        let mtime_ns = meta
            .modified()
            .ok()
            .and_then(|t| t.duration_since(UNIX_EPOCH).ok())
            .map(|d| i64::try_from(d.as_nanos()).unwrap_or(i64::MAX))
            .unwrap_or(0);
        Self {
            size: meta.len(),
            mtime_ns,
        }
    }

    pub fn read(path: &Path) -> io::Result<Self> {
        Ok(Self::of(&std::fs::metadata(path)?))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JournalEntry {
    pub file_id: String,
    pub manifest: FileManifest,
    pub upload_id: Option<String>,
    pub phase: TransferPhase,
    pub acked_chunks: BTreeSet<u64>,
    pub attempt_count: u32,
    pub last_error: Option<String>,
    /// Set when the last failure is not worth retrying.
    #[serde(default)]
    pub terminal: bool,
    pub source: SourceFingerprint,
    pub created_at: DateTime<Utc>,
    pub updated_at: DateTime<Utc>,
}

impl JournalEntry {
    pub fn new(manifest: FileManifest, state: &TransferState, source: SourceFingerprint) -> Self {
        let now = Utc::now();
        Self {
            file_id: manifest.file_id.clone(),
            manifest,
            upload_id: None,
            phase: state.phase,
            acked_chunks: state.acked_chunks.clone(),
            attempt_count: state.attempt_count,
            last_error: state.last_error.clone(),
            terminal: false,
            source,
            created_at: now,
            updated_at: now,
        }
    }

    pub fn state(&self) -> TransferState {
        TransferState {
            phase: self.phase,
            chunk_count: self.manifest.chunk_count(),
            acked_chunks: self.acked_chunks.clone(),
            attempt_count: self.attempt_count,
            last_error: self.last_error.clone(),
        }
    }

    pub fn set_state(&mut self, state: &TransferState) {
        self.phase = state.phase;
        self.acked_chunks = state.acked_chunks.clone();
        self.attempt_count = state.attempt_count;
        self.last_error = state.last_error.clone();
        if state.phase != TransferPhase::Failed {
            self.terminal = false;
        }
        self.updated_at = Utc::now();
    }
}

/// What recovery did when the journal was opened.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RecoveryReport {
    pub entries: usize,
    pub torn_bytes_discarded: u64,
}

struct Inner {
    file: File,
    latest: HashMap<String, JournalEntry>,
}

pub struct Journal {
    path: PathBuf,
    inner: Mutex<Inner>,
}

impl Journal {
    /// Open or create, discarding a torn final line. Corruption before the
    /// final line is refused.
    pub fn open(path: &Path) -> Result<(Self, RecoveryReport), JournalError> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent)?;
        }
        let mut file = OpenOptions::new()
            .read(true)
            .write(true)
            .create(true)
            .truncate(false)
            .open(path)?;
        let mut raw = Vec::new();
        file.read_to_end(&mut raw)?;

        let mut latest = HashMap::new();
        let mut report = RecoveryReport::default();
        let mut valid_len = 0usize;
        let mut needs_newline = false;
        let mut pos = 0usize;
        let mut line_no = 0usize;
        while pos < raw.len() {
            line_no += 1;
            let (line, next, terminated) = match raw[pos..].iter().position(|b| *b == b'\n') {
                Some(i) => (&raw[pos..pos + i], pos + i + 1, true),
                None => (&raw[pos..], raw.len(), false),
            };
            let is_last = next >= raw.len();
            if line.iter().all(u8::is_ascii_whitespace) {
                valid_len = next;
                pos = next;
                continue;
            }
            match serde_json::from_slice::<JournalEntry>(line) {
                Ok(entry) => {
                    latest.insert(entry.file_id.clone(), entry);
                    report.entries += 1;
                    valid_len = next;
                    needs_newline = !terminated;
                }
                Err(_) if is_last => {
                    tracing::warn!(
                        path = %path.display(),
                        bytes = raw.len() - pos,
                        "discarding torn journal tail"
                    );
                    report.torn_bytes_discarded = (raw.len() - pos) as u64;
                }
                Err(e) => {
                    return Err(JournalError::Corrupt {
                        line: line_no,
                        message: e.to_string(),
                    })
                }
            }
            pos = next;
        }

        if valid_len < raw.len() {
            file.set_len(valid_len as u64)?;
        }
        file.seek(SeekFrom::End(0))?;
        if needs_newline {
            file.write_all(b"\n")?;
        }
        if valid_len < raw.len() || needs_newline {
            file.sync_all()?;
        }

        Ok((
            Self {
                path: path.to_owned(),
                inner: Mutex::new(Inner { file, latest }),
            },
            report,
        ))
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append(&self, entry: &JournalEntry) -> Result<(), JournalError> {
        let mut line = serde_json::to_vec(entry).map_err(io::Error::other)?;
        line.push(b'\n');
        let mut inner = self.inner.lock().unwrap();
        let phase_changed = inner
            .latest
            .get(&entry.file_id)
            .is_none_or(|prev| prev.phase != entry.phase);
        inner.file.write_all(&line)?;
        if phase_changed {
            inner.file.sync_data()?;
        }
        inner.latest.insert(entry.file_id.clone(), entry.clone());
        Ok(())
    }

    pub fn get(&self, file_id: &str) -> Option<JournalEntry> {
        self.inner.lock().unwrap().latest.get(file_id).cloned()
    }

    /// Latest entry of every file, oldest first.
    pub fn entries(&self) -> Vec<JournalEntry> {
        let mut all: Vec<JournalEntry> = self.inner.lock().unwrap().latest.values().cloned().collect();
        all.sort_by(|a, b| a.created_at.cmp(&b.created_at).then(a.file_id.cmp(&b.file_id)));
        all
    }

    /// Most recent transfer for a staged path, if any.
    pub fn latest_for_path(&self, owner: &str, relative_path: &str) -> Option<JournalEntry> {
        self.inner
            .lock()
            .unwrap()
            .latest
            .values()
            .filter(|e| e.manifest.owner == owner && e.manifest.relative_path == relative_path)
            .max_by(|a, b| a.created_at.cmp(&b.created_at))
            .cloned()
    }

    pub fn flush(&self) -> Result<(), JournalError> {
        self.inner.lock().unwrap().file.sync_all()?;
        Ok(())
    }
}

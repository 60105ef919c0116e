// SPDX-License-Identifier: Apache-2.0

//! Append-only usage ledger: one JSON commit event per line.

use std::fs::{File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use chrono::{DateTime, Utc};
use relay_core::{Category, ContentDigest};
use serde::{Deserialize, Serialize};

use crate::error::{Result, ServiceError};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UsageEvent {
    pub object_id: String,
    pub owner: String,
    pub relative_path: String,
    pub category: Category,
    pub size: u64,
    pub whole_digest: ContentDigest,
    pub committed_at: DateTime<Utc>,
}

pub struct LedgerWriter {
    path: PathBuf,
    file: Mutex<File>,
}

impl LedgerWriter {
    pub fn open(path: &Path) -> Result<Self> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self {
            path: path.to_owned(),
            file: Mutex::new(file),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append(&self, event: &UsageEvent) -> Result<()> {
        let mut line = serde_json::to_vec(event).map_err(io::Error::other)?;
        line.push(b'\n');
        let mut file = self.file.lock().unwrap();
        file.write_all(&line)?;
        file.sync_data()?;
        Ok(())
    }
}

/// Read every event. A missing file is an empty ledger. An unparseable final
/// line is a torn append and is skipped; corruption anywhere else is an error.
pub fn read_ledger(path: &Path) -> Result<Vec<UsageEvent>> {
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(e.into()),
    };
    let lines: Vec<String> = BufReader::new(file).lines().collect::<io::Result<_>>()?;
    let mut events = Vec::with_capacity(lines.len());
    for (i, line) in lines.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str(line) {
            Ok(event) => events.push(event),
            Err(_) if i + 1 == lines.len() => {
                tracing::warn!(line = i + 1, "ignoring torn ledger tail");
            }
            Err(e) => {
                return Err(ServiceError::CorruptLedger {
                    line: i + 1,
                    message: e.to_string(),
                })
            }
        }
    }
    Ok(events)
}

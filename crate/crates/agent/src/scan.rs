// SPDX-License-Identifier: Apache-2.0

//! Staging-volume scanning.
//!
//! The staging root holds one directory per user; anything a user copies
//! beneath their directory is routed to their namespace. A file is picked
//! up once its size and modification time have been quiet for the
//! stability window.

use std::collections::HashMap;
use std::io;
use std::path::{Path, PathBuf};
use std::time::{Duration, SystemTime};

use relay_core::manifest::{relative_path_string, validate_owner};
use walkdir::WalkDir;

use crate::journal::{Journal, SourceFingerprint};

/// Directory under the staging root that receives committed sources.
pub const ARCHIVE_DIR: &str = ".archived";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StagedFile {
    pub owner: String,
    pub relative_path: String,
    pub path: PathBuf,
    pub fingerprint: SourceFingerprint,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RoutingWarning {
    /// Regular file directly under the root; it belongs to no user.
    OutsideUserDirectory(PathBuf),
    /// Path that cannot be expressed as a manifest relative path.
    UnroutablePath(PathBuf),
}

#[derive(Debug, Default, Clone)]
pub struct ScanOutcome {
    /// Stable files with no journaled transfer for their current content.
    pub stable: Vec<StagedFile>,
    /// Stable files whose current content is already committed.
    pub already_committed: Vec<StagedFile>,
    pub warnings: Vec<RoutingWarning>,
}

/// Remembers what each file looked like on the previous pass so that a
/// change between passes resets its quiet period.
#[derive(Debug, Default)]
pub struct Scanner {
    seen: HashMap<PathBuf, SourceFingerprint>,
}

impl Scanner {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn scan(&mut self, root: &Path, stability_window: Duration, journal: Option<&Journal>) -> io::Result<ScanOutcome> {
        let now = SystemTime::now();
        let mut outcome = ScanOutcome::default();
        let mut seen_now = HashMap::new();

        for entry in std::fs::read_dir(root)? {
            let entry = match entry {
                Ok(e) => e,
                Err(e) if e.kind() == io::ErrorKind::NotFound => continue,
                Err(e) => return Err(e),
            };
            let path = entry.path();
            // dotfiles at the root (journal, archive) are the agent's own
            if entry.file_name().to_string_lossy().starts_with('.') {
                continue;
            }
            let Ok(file_type) = entry.file_type() else { continue };
            if file_type.is_file() {
                outcome.warnings.push(RoutingWarning::OutsideUserDirectory(path));
                continue;
            }
            if !file_type.is_dir() {
                continue;
            }
            let Some(owner) = entry.file_name().to_str().map(str::to_owned) else {
                outcome.warnings.push(RoutingWarning::UnroutablePath(path));
                continue;
            };
            if validate_owner(&owner).is_err() {
                continue;
            }
            self.scan_user(&owner, &path, stability_window, now, journal, &mut outcome, &mut seen_now);
        }
        self.seen = seen_now;
        outcome.stable.sort_by(|a, b| a.path.cmp(&b.path));
        outcome.already_committed.sort_by(|a, b| a.path.cmp(&b.path));
        Ok(outcome)
    }

    #[allow(clippy::too_many_arguments)]
    fn scan_user(
        &self,
        owner: &str,
        user_dir: &Path,
        stability_window: Duration,
        now: SystemTime,
        journal: Option<&Journal>,
        outcome: &mut ScanOutcome,
        seen_now: &mut HashMap<PathBuf, SourceFingerprint>,
    ) {
        let walker = WalkDir::new(user_dir)
            .min_depth(1)
            .follow_links(false)
            .into_iter()
            .filter_entry(|e| !e.file_name().to_string_lossy().starts_with('.'));
        for entry in walker {
            // entries vanishing mid-walk are skipped
            let Ok(entry) = entry else { continue };
            if !entry.file_type().is_file() {
                continue;
            }
            let Ok(meta) = entry.metadata() else { continue };
            let path = entry.path().to_owned();
            let Some(relative_path) = path
                .strip_prefix(user_dir)
                .ok()
                .and_then(relative_path_string)
            else {
                outcome.warnings.push(RoutingWarning::UnroutablePath(path));
                continue;
            };
            let fingerprint = SourceFingerprint::of(&meta);
            let modified = meta.modified().unwrap_or(now);

            seen_now.insert(path.clone(), fingerprint);

            let quiet_for = now.duration_since(modified).unwrap_or_default();
            let changed_since_last_pass = self.seen.get(&path).is_some_and(|prev| *prev != fingerprint);
            if quiet_for < stability_window || changed_since_last_pass {
                continue;
            }

            let staged = StagedFile {
                owner: owner.to_owned(),
                relative_path,
                path,
                fingerprint,
            };
            match journal.and_then(|j| j.latest_for_path(owner, &staged.relative_path)) {
                Some(e) if e.source == fingerprint && e.phase == relay_core::TransferPhase::Committed => {
                    outcome.already_committed.push(staged)
                }
                Some(e) if e.source == fingerprint && e.phase >= relay_core::TransferPhase::Manifested => {}
                _ => outcome.stable.push(staged),
            }
        }
    }
}

/// One-shot scan with no memory of previous passes.
pub fn scan_staging(root: &Path, stability_window: Duration, journal: Option<&Journal>) -> io::Result<ScanOutcome> {
    Scanner::new().scan(root, stability_window, journal)
}

/// Move a committed source to `<root>/.archived/<owner>/<relative_path>`,
/// adding a suffix if that name is taken. Returns the new location.
pub fn archive_source(root: &Path, owner: &str, relative_path: &str, suffix: &str) -> io::Result<PathBuf> {
    let source = root.join(owner).join(relative_path);
    let mut target = root.join(ARCHIVE_DIR).join(owner).join(relative_path);
    if let Some(parent) = target.parent() {
        std::fs::create_dir_all(parent)?;
    }
    if target.exists() {
        let mut name = target.file_name().unwrap_or_default().to_os_string();
        name.push(format!(".{suffix}"));
        target.set_file_name(name);
    }
    std::fs::rename(&source, &target)?;
    Ok(target)
}

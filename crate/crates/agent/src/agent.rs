// SPDX-License-Identifier: Apache-2.0

//! The agent run loop: reconcile, then scan and upload until told to stop.

use std::collections::{HashSet, VecDeque};
use std::future::Future;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use relay_core::manifest::{build_manifest, DEFAULT_CHUNK_SIZE};
use relay_core::wire::CommitReceipt;
use relay_core::{Category, DeviceCredential, TransferEvent, TransferState};
use tokio::task::JoinSet;
use tokio::time::Instant;

use crate::client::ServiceClient;
use crate::error::{AgentError, TransferError};
use crate::journal::{Journal, JournalEntry, RecoveryReport};
use crate::reconcile::{reconcile, ReconcileOutcome, Resumable};
use crate::retry::RetryPolicy;
use crate::scan::{archive_source, RoutingWarning, ScanOutcome, Scanner, StagedFile};
use crate::upload::{TransferMetrics, Uploader, DEFAULT_PARALLELISM};

pub const DEFAULT_STABILITY_WINDOW: Duration = Duration::from_secs(5);
pub const DEFAULT_MAX_ACTIVE_FILES: usize = 2;
pub const JOURNAL_FILE: &str = ".relay-journal";

#[derive(Debug, Clone)]
pub struct AgentConfig {
    pub staging_root: PathBuf,
    pub server_url: String,
    pub credential: DeviceCredential,
    pub journal_path: PathBuf,
    pub chunk_size: u64,
    pub parallelism: usize,
    pub stability_window: Duration,
    pub scan_interval: Duration,
    pub max_active_files: usize,
    pub retry: RetryPolicy,
    /// Category recorded for files whose path does not name one.
    pub default_category: Category,
    pub request_timeout: Duration,
}

impl AgentConfig {
    pub fn new(staging_root: impl Into<PathBuf>, server_url: impl Into<String>, credential: DeviceCredential) -> Self {
        let staging_root = staging_root.into();
        Self {
            journal_path: staging_root.join(JOURNAL_FILE),
            staging_root,
            server_url: server_url.into(),
            credential,
            chunk_size: DEFAULT_CHUNK_SIZE,
            parallelism: DEFAULT_PARALLELISM,
            stability_window: DEFAULT_STABILITY_WINDOW,
            scan_interval: Duration::from_secs(1),
            max_active_files: DEFAULT_MAX_ACTIVE_FILES,
            retry: RetryPolicy::default(),
            default_category: Category::Experimental,
            request_timeout: Duration::from_secs(300),
        }
    }
}

/// Category from the first directory under the user's tree when it names
/// one (`alice/theoretical/run.h5`), else the configured default.
pub fn category_for(relative_path: &str, default: Category) -> Category {
    match relative_path.split_once('/') {
        Some((first, _)) => match Category::parse_lenient(first) {
            Category::Uncategorized if !first.eq_ignore_ascii_case("uncategorized") => default,
            c => c,
        },
        None => default,
    }
}

#[derive(Debug, Default)]
pub struct RunSummary {
    pub committed: Vec<CommitReceipt>,
    pub failed: Vec<(String, String)>,
    pub warnings: Vec<RoutingWarning>,
    pub reconcile: ReconcileOutcome,
}

pub struct Agent {
    config: AgentConfig,
    journal: Arc<Journal>,
    uploader: Uploader,
    recovery: RecoveryReport,
}

struct Retry {
    due: Instant,
    job: Resumable,
}

impl Agent {
    pub fn new(config: AgentConfig) -> Result<Self, AgentError> {
        let meta = std::fs::metadata(&config.staging_root).map_err(|source| AgentError::Staging {
            path: config.staging_root.display().to_string(),
            source,
        })?;
        if !meta.is_dir() {
            return Err(AgentError::Staging {
                path: config.staging_root.display().to_string(),
                source: std::io::Error::new(std::io::ErrorKind::NotADirectory, "not a directory"),
            });
        }
        let (journal, recovery) = Journal::open(&config.journal_path)?;
        if recovery.torn_bytes_discarded > 0 {
            tracing::warn!(bytes = recovery.torn_bytes_discarded, "journal tail was torn and has been truncated");
        }
        let journal = Arc::new(journal);
        let client = ServiceClient::with_timeout(&config.server_url, config.credential.clone(), config.request_timeout)
            .map_err(|e| AgentError::Io(std::io::Error::other(e)))?;
        let uploader = Uploader::new(Arc::new(client), Some(journal.clone()), config.parallelism, config.retry);
        Ok(Self {
            config,
            journal,
            uploader,
            recovery,
        })
    }

    pub fn config(&self) -> &AgentConfig {
        &self.config
    }

    pub fn journal(&self) -> &Arc<Journal> {
        &self.journal
    }

    pub fn recovery(&self) -> RecoveryReport {
        self.recovery
    }

    pub fn metrics(&self) -> &Arc<TransferMetrics> {
        self.uploader.metrics()
    }

    /// Run until `shutdown` resolves.
    pub async fn run(&self, shutdown: impl Future<Output = ()>) -> Result<RunSummary, AgentError> {
        self.run_inner(shutdown, false).await
    }

    /// Run until there is nothing left to do: no stable untransferred
    /// files, nothing uploading and no retries pending.
    pub async fn run_until_idle(&self) -> Result<RunSummary, AgentError> {
        self.run_inner(std::future::pending(), true).await
    }

    async fn run_inner(&self, shutdown: impl Future<Output = ()>, until_idle: bool) -> Result<RunSummary, AgentError> {
        let root = self.config.staging_root.clone();
        let mut summary = RunSummary {
            reconcile: reconcile(&self.journal, &root)?,
            ..Default::default()
        };
        let mut queue: VecDeque<Resumable> = summary.reconcile.resumed.iter().cloned().collect();
        let mut retries: Vec<Retry> = Vec::new();
        let mut active: JoinSet<(Resumable, Result<CommitReceipt, TransferError>)> = JoinSet::new();
        let mut active_ids: HashSet<String> = HashSet::new();
        let mut warned: HashSet<PathBuf> = HashSet::new();
        let mut scanner = Scanner::new();
        let mut ticker = tokio::time::interval(self.config.scan_interval);
        ticker.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);
        let mut waiting_on_stability = true;
        tokio::pin!(shutdown);

        loop {
            while active.len() < self.config.max_active_files.max(1) {
                let Some(job) = queue.pop_front() else { break };
                if !active_ids.insert(job.entry.file_id.clone()) {
                    continue;
                }
                let uploader = self.uploader.clone();
                active.spawn(async move {
                    let result = uploader.resume(job.entry.clone(), &job.source).await;
                    (job, result)
                });
            }
            if until_idle && queue.is_empty() && active.is_empty() && retries.is_empty() && !waiting_on_stability {
                break;
            }

            tokio::select! {
                _ = &mut shutdown => {
                    tracing::info!("shutdown requested");
                    break;
                }
                Some(joined) = active.join_next(), if !active.is_empty() => {
                    let (job, result) = match joined {
                        Ok(done) => done,
                        Err(e) if e.is_panic() => std::panic::resume_unwind(e.into_panic()),
                        Err(_) => continue,
                    };
                    active_ids.remove(&job.entry.file_id);
                    self.finish(job, result, &mut summary, &mut retries);
                }
                _ = ticker.tick() => {
                    let now = Instant::now();
                    let (due, later): (Vec<Retry>, Vec<Retry>) = retries.drain(..).partition(|r| r.due <= now);
                    retries = later;
                    queue.extend(due.into_iter().map(|r| r.job));

                    let busy: HashSet<(String, String)> = queue
                        .iter()
                        .map(|j| &j.entry)
                        .chain(retries.iter().map(|r| &r.job.entry))
                        .map(|e| (e.manifest.owner.clone(), e.manifest.relative_path.clone()))
                        .collect();
                    let outcome = self.scan(&mut scanner)?;
                    waiting_on_stability = until_idle && self.has_unsettled_files()?;
                    for w in outcome.warnings {
                        let path = match &w { RoutingWarning::OutsideUserDirectory(p) | RoutingWarning::UnroutablePath(p) => p.clone() };
                        if warned.insert(path) {
                            tracing::warn!(?w, "file cannot be routed to a user");
                            summary.warnings.push(w);
                        }
                    }
                    for staged in outcome.already_committed {
                        if let Some(e) = self.journal.latest_for_path(&staged.owner, &staged.relative_path) {
                            self.archive(&e);
                        }
                    }
                    for staged in outcome.stable {
                        if busy.contains(&(staged.owner.clone(), staged.relative_path.clone())) {
                            continue;
                        }
                        if !self.config.credential.may_route_for(&staged.owner) {
                            if warned.insert(staged.path.clone()) {
                                tracing::warn!(owner = %staged.owner, path = %staged.path.display(), "owner not registered for this device; skipping");
                            }
                            continue;
                        }
                        if let Some(job) = self.manifest(staged).await? {
                            queue.push_back(job);
                        }
                    }
                }
            }
        }

        active.abort_all();
        while active.join_next().await.is_some() {}
        self.journal.flush()?;
        Ok(summary)
    }

    fn scan(&self, scanner: &mut Scanner) -> Result<ScanOutcome, AgentError> {
        scanner
            .scan(&self.config.staging_root, self.config.stability_window, Some(&self.journal))
            .map_err(|source| AgentError::Staging {
                path: self.config.staging_root.display().to_string(),
                source,
            })
    }

    /// True while some routable staged file has not been journaled yet,
    /// i.e. it is still inside its quiet period.
    fn has_unsettled_files(&self) -> Result<bool, AgentError> {
        let all = Scanner::new()
            .scan(&self.config.staging_root, Duration::ZERO, Some(&self.journal))
            .map_err(AgentError::Io)?;
        Ok(all.stable.iter().any(|f| self.config.credential.may_route_for(&f.owner)))
    }

    async fn manifest(&self, staged: StagedFile) -> Result<Option<Resumable>, AgentError> {
        let category = category_for(&staged.relative_path, self.config.default_category);
        let chunk_size = self.config.chunk_size;
        let StagedFile {
            owner,
            relative_path,
            path,
            fingerprint,
        } = staged;
        let build_path = path.clone();
        let (owner_c, rel_c) = (owner.clone(), relative_path.clone());
        let built = tokio::task::spawn_blocking(move || build_manifest(&build_path, &owner_c, &rel_c, category, chunk_size))
            .await
            .map_err(std::io::Error::other)?;
        let manifest = match built {
            Ok(m) => m,
            Err(relay_core::BuildManifestError::Io(e)) => {
                tracing::info!(path = %path.display(), error = %e, "file vanished before it could be manifested");
                return Ok(None);
            }
            Err(e) => return Err(e.into()),
        };
        // changed while hashing: wait for it to settle again
        match crate::journal::SourceFingerprint::read(&path) {
            Ok(fp) if fp == fingerprint && fp.size == manifest.total_size => {}
            _ => return Ok(None),
        }

        let state = TransferState::discovered()
            .advance(TransferEvent::StabilityConfirmed)
            .and_then(|s| {
                s.advance(TransferEvent::ManifestBuilt {
                    chunk_count: manifest.chunk_count(),
                })
            })
            .expect("fresh transfer accepts stability and manifest events");
        let entry = JournalEntry::new(manifest, &state, fingerprint);
        self.journal.append(&entry)?;
        tracing::info!(owner = %owner, path = %relative_path, file_id = %entry.file_id, size = entry.manifest.total_size, "manifested");
        Ok(Some(Resumable { entry, source: path }))
    }

    fn finish(
        &self,
        job: Resumable,
        result: Result<CommitReceipt, TransferError>,
        summary: &mut RunSummary,
        retries: &mut Vec<Retry>,
    ) {
        match result {
            Ok(receipt) => {
                tracing::info!(object_id = %receipt.object_id, file_id = %job.entry.file_id, "committed");
                if let Some(entry) = self.journal.get(&job.entry.file_id) {
                    self.archive(&entry);
                }
                summary.committed.push(receipt);
            }
            Err(e) => {
                let Some(entry) = self.journal.get(&job.entry.file_id) else { return };
                // transient failures are retried for as long as the agent runs,
                // backing off up to the policy's ceiling
                if e.is_terminal() {
                    tracing::error!(file_id = %entry.file_id, error = %e, attempts = entry.attempt_count, "transfer failed");
                    summary.failed.push((entry.file_id.clone(), e.to_string()));
                } else {
                    let delay = self.config.retry.delay(entry.attempt_count.max(1));
                    tracing::warn!(file_id = %entry.file_id, error = %e, ?delay, "transfer will be retried");
                    retries.push(Retry {
                        due: Instant::now() + delay,
                        job: Resumable { entry, source: job.source },
                    });
                }
            }
        }
    }

    fn archive(&self, entry: &JournalEntry) {
        let root: &Path = &self.config.staging_root;
        match archive_source(root, &entry.manifest.owner, &entry.manifest.relative_path, &entry.file_id) {
            Ok(to) => tracing::debug!(to = %to.display(), "source archived"),
            Err(e) => tracing::warn!(error = %e, path = %entry.manifest.relative_path, "could not archive source"),
        }
    }
}

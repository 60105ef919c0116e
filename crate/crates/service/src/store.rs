// SPDX-License-Identifier: Apache-2.0

//! Upload sessions, commit and object reads.
//!
//! On-disk layout under the data root:
//!
//! ```text
//! <owner>/<relative_path>              latest committed version
//! .versions/<owner>/<relative_path>@<object_id>   superseded versions
//! .spool/<upload_id>/session.json      open session (device + manifest)
//! .spool/<upload_id>/<index>.chunk     verified chunk payloads
//! .ledger                              commit events
//! .lock                                single-instance lock
//! ```

use std::collections::{BTreeSet, HashMap};
use std::fs::{self, File, OpenOptions, TryLockError};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use chrono::{DateTime, Utc};
use relay_core::manifest::new_file_id;
use relay_core::wire::{ChunkAck, CommitReceipt, InitUploadResponse, TokenResponse};
use relay_core::{Category, ContentDigest, DeviceCredential, DigestHasher, FileManifest};
use serde::{Deserialize, Serialize};

use crate::auth::{Authenticator, Principal, RateLimit, DEFAULT_TOKEN_TTL};
use crate::error::{Result, ServiceError};
use crate::ledger::{read_ledger, LedgerWriter, UsageEvent};
use crate::quota::{QuotaBook, QuotaPolicy, UserUsage};
use crate::stats::{aggregate_stats, cumulative_by_month, MonthlyPoint, OrgMap, StatsPeriod, UsageReport};

const SPOOL_DIR: &str = ".spool";
const VERSIONS_DIR: &str = ".versions";
const LEDGER_FILE: &str = ".ledger";
const LOCK_FILE: &str = ".lock";
const SESSION_FILE: &str = "session.json";

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub data_root: PathBuf,
    pub devices: Vec<DeviceCredential>,
    pub token_ttl: Duration,
    pub quota: QuotaPolicy,
    pub rate_limit: RateLimit,
    pub orgs: Option<OrgMap>,
}

impl ServiceConfig {
    pub fn new(data_root: impl Into<PathBuf>, devices: Vec<DeviceCredential>) -> Self {
        Self {
            data_root: data_root.into(),
            devices,
            token_ttl: DEFAULT_TOKEN_TTL,
            quota: QuotaPolicy::default(),
            rate_limit: RateLimit::default(),
            orgs: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoredObject {
    pub object_id: String,
    pub owner: String,
    pub relative_path: String,
    pub category: Category,
    pub total_size: u64,
    pub whole_digest: ContentDigest,
    pub committed_at: DateTime<Utc>,
}

impl From<UsageEvent> for StoredObject {
    fn from(e: UsageEvent) -> Self {
        Self {
            object_id: e.object_id,
            owner: e.owner,
            relative_path: e.relative_path,
            category: e.category,
            total_size: e.size,
            whole_digest: e.whole_digest,
            committed_at: e.committed_at,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct SessionRecord {
    device_id: String,
    manifest: FileManifest,
}

struct UploadSession {
    upload_id: String,
    device_id: String,
    manifest: FileManifest,
    dir: PathBuf,
    acked: Mutex<BTreeSet<u64>>,
    /// Held for the whole of a complete call, so a retried complete waits
    /// for an in-progress commit instead of racing it.
    completing: Mutex<()>,
}

impl UploadSession {
    fn chunk_path(&self, index: u64) -> PathBuf {
        self.dir.join(format!("{index}.chunk"))
    }
}

struct Completed {
    device_id: String,
    receipt: CommitReceipt,
}

type ObjectKey = (String, String);

pub struct StorageService {
    root: PathBuf,
    _lock: File,
    auth: Authenticator,
    quota: QuotaBook,
    ledger: LedgerWriter,
    orgs: Option<OrgMap>,
    sessions: Mutex<HashMap<String, Arc<UploadSession>>>,
    completed: Mutex<HashMap<String, Completed>>,
    /// Versions per (owner, path), latest last.
    objects: Mutex<HashMap<ObjectKey, Vec<StoredObject>>>,
    commit_locks: Mutex<HashMap<ObjectKey, Arc<Mutex<()>>>>,
}

fn random_id() -> String {
    new_file_id()
}

impl StorageService {
    /// Open (or create) a data root. Fails if another instance holds it.
    pub fn open(config: ServiceConfig) -> Result<Self> {
        let root = config.data_root;
        fs::create_dir_all(&root)?;
        let lock = OpenOptions::new()
            .create(true)
            .truncate(false)
            .write(true)
            .open(root.join(LOCK_FILE))?;
        match lock.try_lock() {
            Ok(()) => {}
            Err(TryLockError::WouldBlock) => {
                return Err(ServiceError::DataRootLocked(root.display().to_string()))
            }
            Err(TryLockError::Error(e)) => return Err(e.into()),
        }
        fs::create_dir_all(root.join(SPOOL_DIR))?;
        fs::create_dir_all(root.join(VERSIONS_DIR))?;

        let quota = QuotaBook::new(config.quota);
        let mut objects: HashMap<ObjectKey, Vec<StoredObject>> = HashMap::new();
        let ledger_path = root.join(LEDGER_FILE);
        for event in read_ledger(&ledger_path)? {
            quota.restore_committed(&event.owner, event.size);
            objects
                .entry((event.owner.clone(), event.relative_path.clone()))
                .or_default()
                .push(event.into());
        }

        let service = Self {
            auth: Authenticator::new(config.devices, config.token_ttl, config.rate_limit),
            quota,
            ledger: LedgerWriter::open(&ledger_path)?,
            orgs: config.orgs,
            sessions: Mutex::new(HashMap::new()),
            completed: Mutex::new(HashMap::new()),
            objects: Mutex::new(objects),
            commit_locks: Mutex::new(HashMap::new()),
            _lock: lock,
            root,
        };
        service.recover_spool()?;
        Ok(service)
    }

    pub fn data_root(&self) -> &Path {
        &self.root
    }

    fn recover_spool(&self) -> Result<()> {
        let spool = self.root.join(SPOOL_DIR);
        for entry in fs::read_dir(&spool)? {
            let dir = entry?.path();
            let Some(upload_id) = dir.file_name().and_then(|n| n.to_str()).map(str::to_owned)
            else {
                continue;
            };
            let record: Option<SessionRecord> = fs::read(dir.join(SESSION_FILE))
                .ok()
                .and_then(|b| serde_json::from_slice(&b).ok());
            let Some(record) = record.filter(|r| r.manifest.validate().is_ok()) else {
                tracing::warn!(%upload_id, "discarding unreadable spool session");
                let _ = fs::remove_dir_all(&dir);
                continue;
            };
            let session = UploadSession {
                upload_id: upload_id.clone(),
                device_id: record.device_id,
                manifest: record.manifest,
                dir,
                acked: Mutex::new(BTreeSet::new()),
                completing: Mutex::new(()),
            };
            let mut acked = BTreeSet::new();
            for chunk in &session.manifest.chunks {
                if let Ok(bytes) = fs::read(session.chunk_path(chunk.index)) {
                    if relay_core::verify_chunk(&bytes, chunk) {
                        acked.insert(chunk.index);
                    }
                }
            }
            *session.acked.lock().unwrap() = acked;
            self.quota
                .restore_reserved(&session.manifest.owner, session.manifest.total_size);
            tracing::info!(%upload_id, "recovered spooled upload session");
            self.sessions
                .lock()
                .unwrap()
                .insert(upload_id, Arc::new(session));
        }
        Ok(())
    }

    pub fn issue_token(&self, device_id: &str, device_secret: &str) -> Result<TokenResponse> {
        self.auth.issue_token(device_id, device_secret)
    }

    pub fn authorize(&self, bearer: Option<&str>) -> Result<Principal> {
        self.auth.authorize(bearer)
    }

    pub fn usage(&self, user: &str) -> UserUsage {
        self.quota.usage(user)
    }

    pub fn quota_policy(&self) -> QuotaPolicy {
        self.quota.policy()
    }

    pub fn init_upload(&self, principal: &Principal, manifest: FileManifest) -> Result<InitUploadResponse> {
        manifest.validate()?;
        if !principal.may_access(&manifest.owner) {
            return Err(ServiceError::OwnerNotAuthorized(manifest.owner));
        }
        self.quota.reserve(&manifest.owner, manifest.total_size)?;

        let upload_id = random_id();
        let dir = self.root.join(SPOOL_DIR).join(&upload_id);
        let created = (|| -> io::Result<()> {
            fs::create_dir_all(&dir)?;
            let record = SessionRecord {
                device_id: principal.device_id.clone(),
                manifest: manifest.clone(),
            };
            let bytes = serde_json::to_vec(&record).map_err(io::Error::other)?;
            write_atomic(&dir.join(SESSION_FILE), &bytes)
        })();
        if let Err(e) = created {
            self.quota.release(&manifest.owner, manifest.total_size);
            let _ = fs::remove_dir_all(&dir);
            return Err(e.into());
        }

        tracing::debug!(%upload_id, owner = %manifest.owner, path = %manifest.relative_path, "upload session opened");
        let session = UploadSession {
            upload_id: upload_id.clone(),
            device_id: principal.device_id.clone(),
            manifest,
            dir,
            acked: Mutex::new(BTreeSet::new()),
                completing: Mutex::new(()),
        };
        self.sessions
            .lock()
            .unwrap()
            .insert(upload_id.clone(), Arc::new(session));
        Ok(InitUploadResponse { upload_id })
    }

    fn session(&self, principal: &Principal, upload_id: &str) -> Result<Arc<UploadSession>> {
        self.sessions
            .lock()
            .unwrap()
            .get(upload_id)
            .filter(|s| s.device_id == principal.device_id)
            .cloned()
            .ok_or_else(|| ServiceError::UploadNotFound(upload_id.to_owned()))
    }

    pub fn put_chunk(
        &self,
        principal: &Principal,
        upload_id: &str,
        index: u64,
        claimed_digest: Option<&str>,
        payload: &[u8],
    ) -> Result<ChunkAck> {
        let session = self.session(principal, upload_id)?;
        let record = session.manifest.chunk(index).ok_or(ServiceError::ChunkIndexOutOfRange {
            index,
            chunk_count: session.manifest.chunk_count(),
        })?;
        let actual = ContentDigest::of(payload);
        let matches = payload.len() as u64 == record.length && actual == record.digest;

        if session.acked.lock().unwrap().contains(&index) {
            return if matches {
                Ok(ChunkAck {
                    index,
                    digest: record.digest.clone(),
                })
            } else {
                Err(ServiceError::ChunkConflict { index })
            };
        }
        let claim_ok = claimed_digest.is_none_or(|c| c == record.digest.as_hex());
        if !matches || !claim_ok {
            tracing::warn!(%upload_id, index, "chunk digest mismatch");
            return Err(ServiceError::ChunkDigestMismatch { index });
        }

        write_atomic(&session.chunk_path(index), payload)?;
        session.acked.lock().unwrap().insert(index);
        Ok(ChunkAck {
            index,
            digest: record.digest.clone(),
        })
    }

    fn commit_lock(&self, key: &ObjectKey) -> Arc<Mutex<()>> {
        self.commit_locks
            .lock()
            .unwrap()
            .entry(key.clone())
            .or_default()
            .clone()
    }

    pub fn complete_upload(&self, principal: &Principal, upload_id: &str) -> Result<CommitReceipt> {
        if let Some(receipt) = self.completed_receipt(principal, upload_id) {
            return Ok(receipt);
        }
        let session = match self.session(principal, upload_id) {
            Ok(s) => s,
            Err(e) => return self.completed_receipt(principal, upload_id).ok_or(e),
        };
        let _completing = session.completing.lock().unwrap();
        if let Some(receipt) = self.completed_receipt(principal, upload_id) {
            return Ok(receipt);
        }
        if !self.sessions.lock().unwrap().contains_key(upload_id) {
            // voided by a concurrent complete
            return Err(ServiceError::UploadNotFound(upload_id.to_owned()));
        }
        {
            let acked = session.acked.lock().unwrap();
            let pending: Vec<u64> = (0..session.manifest.chunk_count())
                .filter(|i| !acked.contains(i))
                .collect();
            if !pending.is_empty() {
                return Err(ServiceError::UploadIncomplete { pending });
            }
        }

        match self.commit_session(&session) {
            Ok(receipt) => {
                self.completed.lock().unwrap().insert(
                    upload_id.to_owned(),
                    Completed {
                        device_id: session.device_id.clone(),
                        receipt: receipt.clone(),
                    },
                );
                self.sessions.lock().unwrap().remove(upload_id);
                let _ = fs::remove_dir_all(&session.dir);
                Ok(receipt)
            }
            Err(e @ ServiceError::IntegrityFailure { .. }) => {
                tracing::warn!(%upload_id, error = %e, "voiding upload session");
                self.sessions.lock().unwrap().remove(upload_id);
                self.quota
                    .release(&session.manifest.owner, session.manifest.total_size);
                let _ = fs::remove_dir_all(&session.dir);
                Err(e)
            }
            // transient failure: the session stays resumable
            Err(e) => Err(e),
        }
    }

    fn completed_receipt(&self, principal: &Principal, upload_id: &str) -> Option<CommitReceipt> {
        self.completed
            .lock()
            .unwrap()
            .get(upload_id)
            .filter(|done| done.device_id == principal.device_id)
            .map(|done| done.receipt.clone())
    }

    fn commit_session(&self, session: &UploadSession) -> Result<CommitReceipt> {
        let manifest = &session.manifest;
        let key = (manifest.owner.clone(), manifest.relative_path.clone());
        let lock = self.commit_lock(&key);
        let _guard = lock.lock().unwrap();

        let assembled = session.dir.join("assembled");
        let mut out = File::create(&assembled)?;
        let mut hasher = DigestHasher::new();
        for chunk in &manifest.chunks {
            let bytes = fs::read(session.chunk_path(chunk.index))?;
            hasher.update(&bytes);
            out.write_all(&bytes)?;
        }
        out.sync_all()?;
        drop(out);
        let actual = hasher.finish();
        if actual != manifest.whole_digest {
            return Err(ServiceError::IntegrityFailure {
                expected: manifest.whole_digest.to_string(),
                actual: actual.to_string(),
            });
        }

        let latest = self
            .objects
            .lock()
            .unwrap()
            .get(&key)
            .and_then(|v| v.last().cloned());
        if let Some(existing) = latest.as_ref().filter(|o| o.whole_digest == actual) {
            tracing::info!(object_id = %existing.object_id, "identical re-commit is a no-op");
            self.quota.release(&manifest.owner, manifest.total_size);
            return Ok(CommitReceipt {
                object_id: existing.object_id.clone(),
                whole_digest: actual,
            });
        }

        let final_path = self.root.join(&manifest.owner).join(&manifest.relative_path);
        if let Some(parent) = final_path.parent() {
            fs::create_dir_all(parent)?;
        }
        if let Some(previous) = &latest {
            let kept = self
                .root
                .join(VERSIONS_DIR)
                .join(&manifest.owner)
                .join(format!("{}@{}", manifest.relative_path, previous.object_id));
            if let Some(parent) = kept.parent() {
                fs::create_dir_all(parent)?;
            }
            match fs::hard_link(&final_path, &kept) {
                Ok(()) => {}
                Err(e) if e.kind() == io::ErrorKind::AlreadyExists => {}
                Err(e) => return Err(e.into()),
            }
        }
        fs::rename(&assembled, &final_path)?;

        let object = StoredObject {
            object_id: random_id(),
            owner: manifest.owner.clone(),
            relative_path: manifest.relative_path.clone(),
            category: manifest.category,
            total_size: manifest.total_size,
            whole_digest: actual.clone(),
            committed_at: Utc::now(),
        };
        self.ledger.append(&UsageEvent {
            object_id: object.object_id.clone(),
            owner: object.owner.clone(),
            relative_path: object.relative_path.clone(),
            category: object.category,
            size: object.total_size,
            whole_digest: object.whole_digest.clone(),
            committed_at: object.committed_at,
        })?;
        self.quota.commit(&manifest.owner, manifest.total_size);
        let receipt = CommitReceipt {
            object_id: object.object_id.clone(),
            whole_digest: actual,
        };
        tracing::info!(object_id = %object.object_id, owner = %object.owner, path = %object.relative_path, upload_id = %session.upload_id, "committed");
        self.objects.lock().unwrap().entry(key).or_default().push(object);
        Ok(receipt)
    }

    /// Latest committed bytes of `(owner, relative_path)`, re-verified.
    /// Paths outside the caller's namespaces are indistinguishable from
    /// missing ones.
    pub fn get_object(&self, principal: &Principal, owner: &str, relative_path: &str) -> Result<Vec<u8>> {
        if !principal.may_access(owner) {
            return Err(ServiceError::NotFound);
        }
        let key = (owner.to_owned(), relative_path.to_owned());
        let lock = self.commit_lock(&key);
        let _guard = lock.lock().unwrap();
        let object = self
            .objects
            .lock()
            .unwrap()
            .get(&key)
            .and_then(|v| v.last().cloned())
            .ok_or(ServiceError::NotFound)?;
        let bytes = fs::read(self.root.join(owner).join(relative_path))?;
        let actual = ContentDigest::of(&bytes);
        if actual != object.whole_digest {
            tracing::error!(object_id = %object.object_id, "stored bytes fail verification");
            return Err(ServiceError::IntegrityFailure {
                expected: object.whole_digest.to_string(),
                actual: actual.to_string(),
            });
        }
        Ok(bytes)
    }

    /// All committed versions, in commit order per path.
    pub fn objects(&self) -> Vec<StoredObject> {
        let mut all: Vec<StoredObject> = self
            .objects
            .lock()
            .unwrap()
            .values()
            .flatten()
            .cloned()
            .collect();
        all.sort_by_key(|o| o.committed_at);
        all
    }

    pub fn open_sessions(&self) -> usize {
        self.sessions.lock().unwrap().len()
    }

    pub fn ledger_path(&self) -> &Path {
        self.ledger.path()
    }

    pub fn stats(&self, period: StatsPeriod) -> Result<UsageReport> {
        let events = read_ledger(self.ledger.path())?;
        Ok(aggregate_stats(&events, period, self.orgs.as_ref()))
    }

    /// Running totals at the end of each month with a commit.
    pub fn cumulative_stats(&self) -> Result<Vec<MonthlyPoint>> {
        let events = read_ledger(self.ledger.path())?;
        Ok(cumulative_by_month(&events, self.orgs.as_ref()))
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let tmp = path.with_extension(format!("tmp-{:016x}", rand::random::<u64>()));
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path).inspect_err(|_| {
        let _ = fs::remove_file(&tmp);
    })
}

// SPDX-License-Identifier: Apache-2.0

//! Journaled, resumable, parallel chunk upload of one file.

use std::os::unix::fs::FileExt;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use futures::stream::{self, StreamExt};
use relay_core::wire::{CommitReceipt, ErrorCode};
use relay_core::{plan_resume, ChunkRecord, FileManifest, TransferEvent, TransferPhase, TransferState};

use crate::client::ServiceClient;
use crate::error::{ClientError, TransferError};
use crate::journal::{Journal, JournalEntry, SourceFingerprint};
use crate::retry::RetryPolicy;

pub const DEFAULT_PARALLELISM: usize = 4;

/// Counters shared by every transfer of one uploader.
#[derive(Debug, Default)]
pub struct TransferMetrics {
    pub chunks_sent: AtomicU64,
    pub chunks_acked: AtomicU64,
    pub bytes_acked: AtomicU64,
    pub in_flight: AtomicUsize,
    pub max_in_flight: AtomicUsize,
}

impl TransferMetrics {
    fn begin(&self) {
        self.chunks_sent.fetch_add(1, Ordering::Relaxed);
        let now = self.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
        self.max_in_flight.fetch_max(now, Ordering::SeqCst);
    }

    fn end(&self) {
        self.in_flight.fetch_sub(1, Ordering::SeqCst);
    }
}

#[derive(Clone)]
pub struct Uploader {
    client: Arc<ServiceClient>,
    journal: Option<Arc<Journal>>,
    parallelism: usize,
    retry: RetryPolicy,
    metrics: Arc<TransferMetrics>,
}

impl Uploader {
    pub fn new(client: Arc<ServiceClient>, journal: Option<Arc<Journal>>, parallelism: usize, retry: RetryPolicy) -> Self {
        Self {
            client,
            journal,
            parallelism: parallelism.max(1),
            retry,
            metrics: Arc::default(),
        }
    }

    pub fn with_metrics(mut self, metrics: Arc<TransferMetrics>) -> Self {
        self.metrics = metrics;
        self
    }

    pub fn metrics(&self) -> &Arc<TransferMetrics> {
        &self.metrics
    }

    pub fn client(&self) -> &Arc<ServiceClient> {
        &self.client
    }

    /// Upload a freshly built manifest from `source`.
    pub async fn upload_file(&self, manifest: FileManifest, source: &Path) -> Result<CommitReceipt, TransferError> {
        let fingerprint = SourceFingerprint::read(source)?;
        let state = TransferState::manifested(manifest.chunk_count());
        let entry = JournalEntry::new(manifest, &state, fingerprint);
        self.record(&entry)?;
        self.resume(entry, source).await
    }

    /// Continue a journaled transfer from wherever it stopped.
    pub async fn resume(&self, entry: JournalEntry, source: &Path) -> Result<CommitReceipt, TransferError> {
        let shared = Arc::new(Mutex::new(entry));
        let source = source.to_owned();
        let result = self.drive(&shared, &source).await;
        if let Err(e) = &result {
            let mut entry = shared.lock().unwrap();
            if let Ok(failed) = entry.state().advance(TransferEvent::Error(e.to_string())) {
                entry.set_state(&failed);
                entry.terminal = e.is_terminal();
                let _ = self.record(&entry);
            }
        }
        result
    }

    fn record(&self, entry: &JournalEntry) -> Result<(), TransferError> {
        if let Some(journal) = &self.journal {
            journal.append(entry)?;
        }
        Ok(())
    }

    fn apply(&self, shared: &Mutex<JournalEntry>, event: TransferEvent) -> Result<(), TransferError> {
        let mut entry = shared.lock().unwrap();
        let next = entry.state().advance(event)?;
        entry.set_state(&next);
        self.record(&entry)
    }

    async fn drive(&self, shared: &Arc<Mutex<JournalEntry>>, source: &Path) -> Result<CommitReceipt, TransferError> {
        let manifest = shared.lock().unwrap().manifest.clone();
        if !self.client.credential().may_route_for(&manifest.owner) {
            return Err(TransferError::UnregisteredOwner(manifest.owner));
        }
        let mut sessions_opened = 0u32;
        loop {
            let (phase, upload_id) = {
                let e = shared.lock().unwrap();
                (e.phase, e.upload_id.clone())
            };
            let upload_id = match upload_id {
                Some(id) => id,
                None => {
                    sessions_opened += 1;
                    if sessions_opened > self.retry.max_attempts {
                        return Err(TransferError::SessionLost);
                    }
                    let id = self.with_retries(|| self.client.init_upload(&manifest)).await?;
                    let mut e = shared.lock().unwrap();
                    e.upload_id = Some(id.clone());
                    e.acked_chunks.clear();
                    if e.phase == TransferPhase::Verifying {
                        // a fresh session has no chunks
                        let failed = e.state().advance(TransferEvent::Error("session lost".into()))?;
                        e.set_state(&failed);
                    }
                    self.record(&e)?;
                    id
                }
            };
            if matches!(phase, TransferPhase::Manifested | TransferPhase::Failed) {
                self.apply(shared, TransferEvent::UploadStarted)?;
            }

            if shared.lock().unwrap().phase == TransferPhase::Uploading {
                match self.send_pending(shared, &upload_id, source).await {
                    Ok(()) => self.apply(shared, TransferEvent::AllChunksAcked)?,
                    Err(TransferError::SessionLost) => {
                        self.restart_session(shared, "upload session lost")?;
                        continue;
                    }
                    Err(e) => return Err(e),
                }
            }

            match self.with_retries(|| self.client.complete_upload(&upload_id)).await {
                Ok(receipt) => {
                    if receipt.whole_digest != manifest.whole_digest {
                        return Err(ClientError::Protocol("receipt digest differs from manifest".into()).into());
                    }
                    self.apply(shared, TransferEvent::CommitConfirmed)?;
                    return Ok(receipt);
                }
                Err(ClientError::Api {
                    code: ErrorCode::UploadIncomplete,
                    detail,
                    ..
                }) => {
                    let pending: Vec<u64> = serde_json::from_value(detail["pending"].clone()).unwrap_or_default();
                    tracing::warn!(?pending, "service reports missing chunks");
                    let mut e = shared.lock().unwrap();
                    for i in pending {
                        e.acked_chunks.remove(&i);
                    }
                    let failed = e.state().advance(TransferEvent::Error("service reported missing chunks".into()))?;
                    e.set_state(&failed);
                    self.record(&e)?;
                }
                Err(ClientError::Api {
                    code: ErrorCode::UploadNotFound,
                    ..
                }) => self.restart_session(shared, "upload session lost")?,
                Err(e) => return Err(e.into()),
            }
        }
    }

    fn restart_session(&self, shared: &Mutex<JournalEntry>, why: &str) -> Result<(), TransferError> {
        let mut e = shared.lock().unwrap();
        e.upload_id = None;
        e.acked_chunks.clear();
        if e.phase != TransferPhase::Failed {
            let failed = e.state().advance(TransferEvent::Error(why.to_owned()))?;
            e.set_state(&failed);
        }
        self.record(&e)
    }

    async fn with_retries<T, F, Fut>(&self, call: F) -> Result<T, ClientError>
    where
        F: Fn() -> Fut,
        Fut: std::future::Future<Output = Result<T, ClientError>>,
    {
        let mut attempt = 0;
        loop {
            attempt += 1;
            match call().await {
                Err(e) if e.is_transient() && !self.retry.exhausted(attempt) => {
                    let delay = self.retry.delay(attempt);
                    tracing::warn!(error = %e, attempt, ?delay, "transient failure, backing off");
                    tokio::time::sleep(delay).await;
                }
                other => return other,
            }
        }
    }

    async fn send_pending(&self, shared: &Arc<Mutex<JournalEntry>>, upload_id: &str, source: &Path) -> Result<(), TransferError> {
        let (pending, records) = {
            let e = shared.lock().unwrap();
            (plan_resume(&e.manifest, &e.acked_chunks)?, e.manifest.chunks.clone())
        };
        let mut results = stream::iter(pending)
            .map(|index| {
                let record = records[index as usize].clone();
                self.send_chunk(shared, upload_id, record, source.to_owned())
            })
            .buffer_unordered(self.parallelism);
        while let Some(result) = results.next().await {
            result?;
        }
        Ok(())
    }

    async fn send_chunk(
        &self,
        shared: &Arc<Mutex<JournalEntry>>,
        upload_id: &str,
        record: ChunkRecord,
        source: PathBuf,
    ) -> Result<(), TransferError> {
        let mut attempt = 0;
        loop {
            attempt += 1;
            let payload = read_chunk(&source, &record).await?;
            self.metrics.begin();
            let result = self
                .client
                .put_chunk(upload_id, record.index, &record.digest, payload)
                .await;
            self.metrics.end();
            let retryable = match result {
                Ok(ack) => {
                    if ack.index != record.index || ack.digest != record.digest {
                        return Err(ClientError::Protocol(format!("ack mismatch for chunk {}", record.index)).into());
                    }
                    self.apply(shared, TransferEvent::ChunkAcked(record.index))?;
                    self.metrics.chunks_acked.fetch_add(1, Ordering::Relaxed);
                    self.metrics.bytes_acked.fetch_add(record.length, Ordering::Relaxed);
                    return Ok(());
                }
                Err(ClientError::Api {
                    code: ErrorCode::UploadNotFound,
                    ..
                }) => return Err(TransferError::SessionLost),
                Err(
                    e @ ClientError::Api {
                        code: ErrorCode::ChunkDigestMismatch,
                        ..
                    },
                ) => e,
                Err(e) if e.is_transient() => e,
                Err(e) => return Err(e.into()),
            };
            if self.retry.exhausted(attempt) {
                tracing::error!(index = record.index, error = %retryable, "chunk retries exhausted");
                return Err(TransferError::ChunkRetriesExhausted {
                    index: record.index,
                    attempts: attempt,
                });
            }
            let delay = self.retry.delay(attempt);
            tracing::warn!(index = record.index, error = %retryable, ?delay, "retrying chunk");
            tokio::time::sleep(delay).await;
        }
    }
}

async fn read_chunk(source: &Path, record: &ChunkRecord) -> Result<Vec<u8>, TransferError> {
    let source = source.to_owned();
    let (offset, length) = (record.offset, record.length as usize);
    let bytes = tokio::task::spawn_blocking(move || -> std::io::Result<Vec<u8>> {
        let file = std::fs::File::open(&source)?;
        let mut buf = vec![0u8; length];
        file.read_exact_at(&mut buf, offset)?;
        Ok(buf)
    })
    .await
    .map_err(std::io::Error::other)??;
    Ok(bytes)
}

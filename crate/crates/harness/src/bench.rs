// SPDX-License-Identifier: Apache-2.0

//! Throughput benchmark: upload a set of random files through the agent
//! path to an in-process service behind a shaper, several times, and
//! report medians.

use std::io::Write;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Instant;

use futures::stream::{self, StreamExt};
use rand::{RngCore, SeedableRng};
use relay_agent::{ClientError, Journal, JournalError, RetryPolicy, ServiceClient, TransferError, Uploader};
use relay_core::manifest::{build_manifest, new_file_id};
use relay_core::{BuildManifestError, Category, DeviceCredential, FileManifest};
use relay_service::{spawn_server, ServiceConfig, ServiceError, StorageService};
use serde::Serialize;
use thiserror::Error;

use crate::latency::{median, profile_latency, relative_spread, EchoServer, LatencyError, DEFAULT_SAMPLES};
use crate::profile::{NetworkProfile, MEGABYTE};
use crate::shaper::start_shaper;

pub const BENCH_OWNER: &str = "bench";
pub const DEFAULT_FILE_COUNT: usize = 10;
pub const DEFAULT_REPETITIONS: usize = 5;
pub const DEFAULT_BENCH_CHUNK: u64 = 2 * 1024 * 1024;
/// Run-to-run variation above this is flagged in the report.
pub const SPREAD_WARNING: f64 = 0.05;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("invalid bench spec: {0}")]
    InvalidSpec(String),
    #[error("bench io: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Manifest(#[from] BuildManifestError),
    #[error("service: {0}")]
    Service(#[from] ServiceError),
    #[error("client: {0}")]
    Client(#[from] ClientError),
    #[error("transfer: {0}")]
    Transfer(#[from] TransferError),
    #[error(transparent)]
    Journal(#[from] JournalError),
    #[error("latency: {0}")]
    Latency(#[from] LatencyError),
    #[error("integrity check failed: {0}")]
    Integrity(String),
}

#[derive(Debug, Clone)]
pub struct BenchSpec {
    pub profile: NetworkProfile,
    pub file_count: usize,
    pub file_size_bytes: u64,
    pub parallelism: usize,
    pub repetitions: usize,
    pub chunk_size: u64,
    /// Files uploading at once; each gets `parallelism` chunk streams.
    pub max_active_files: usize,
    pub latency_samples: usize,
}

impl BenchSpec {
    pub fn new(profile: NetworkProfile, file_size_bytes: u64) -> Self {
        Self {
            profile,
            file_count: DEFAULT_FILE_COUNT,
            file_size_bytes,
            parallelism: relay_agent::DEFAULT_PARALLELISM,
            repetitions: DEFAULT_REPETITIONS,
            chunk_size: DEFAULT_BENCH_CHUNK,
            max_active_files: relay_agent::DEFAULT_MAX_ACTIVE_FILES,
            latency_samples: DEFAULT_SAMPLES,
        }
    }

    pub fn validate(&self) -> Result<(), BenchError> {
        let bad = |m: &str| Err(BenchError::InvalidSpec(m.to_owned()));
        if self.file_count == 0 {
            return bad("file_count must be at least 1");
        }
        if self.repetitions == 0 || self.repetitions.is_multiple_of(2) {
            return bad("repetitions must be odd so the median is a sample");
        }
        if self.parallelism == 0 || self.max_active_files == 0 {
            return bad("parallelism and max_active_files must be at least 1");
        }
        if self.chunk_size == 0 {
            return bad("chunk_size must be at least 1");
        }
        if self.latency_samples == 0 {
            return bad("latency_samples must be at least 1");
        }
        self.profile
            .validate()
            .map_err(|e| BenchError::InvalidSpec(e.to_string()))
    }
}

#[derive(Debug, Clone)]
pub struct FixtureFile {
    pub path: PathBuf,
    pub manifest: FileManifest,
}

/// Random files and their manifests, generated once and reused by every
/// run so that hashing stays outside the timed region.
pub struct BenchFixture {
    _dir: tempfile::TempDir,
    pub files: Vec<FixtureFile>,
    pub file_size: u64,
    pub chunk_size: u64,
}

impl BenchFixture {
    pub fn generate(file_count: usize, file_size: u64, chunk_size: u64, seed: u64) -> Result<Self, BenchError> {
        let dir = tempfile::Builder::new().prefix("relay-bench-").tempdir()?;
        let mut rng = rand::rngs::StdRng::seed_from_u64(seed);
        let mut block = vec![0u8; 1 << 20];
        let mut files = Vec::with_capacity(file_count);
        for i in 0..file_count {
            let rel = format!("file-{i:03}.bin");
            let path = dir.path().join(&rel);
            let mut out = std::io::BufWriter::new(std::fs::File::create(&path)?);
            let mut left = file_size;
            while left > 0 {
                let n = left.min(block.len() as u64) as usize;
                rng.fill_bytes(&mut block[..n]);
                out.write_all(&block[..n])?;
                left -= n as u64;
            }
            out.flush()?;
            drop(out);
            let manifest = build_manifest(&path, BENCH_OWNER, &rel, Category::Experimental, chunk_size)?;
            files.push(FixtureFile { path, manifest });
        }
        Ok(Self {
            _dir: dir,
            files,
            file_size,
            chunk_size,
        })
    }

    pub fn total_bytes(&self) -> u64 {
        self.files.iter().map(|f| f.manifest.total_size).sum()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RunSample {
    pub run: usize,
    pub latency_ms: f64,
    #[serde(rename = "throughput_MBps")]
    pub throughput_mbps: f64,
    pub bytes: u64,
    pub seconds: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchReport {
    pub profile: String,
    pub effective_rtt_ms: f64,
    #[serde(rename = "bandwidth_cap_MBps")]
    pub bandwidth_cap_mbps: Option<f64>,
    pub loopback_baseline_ms: f64,
    pub median_latency_ms: f64,
    #[serde(rename = "median_throughput_MBps")]
    pub median_throughput_mbps: f64,
    pub run_samples: Vec<RunSample>,
    /// Largest deviation of a run's throughput from the median, as a fraction.
    pub relative_spread: f64,
    pub latency_relative_spread: f64,
    pub spread_warning: bool,
}

impl BenchReport {
    /// Median latency with the relay's own cost taken out.
    pub fn net_latency_ms(&self) -> f64 {
        (self.median_latency_ms - self.loopback_baseline_ms).max(0.0)
    }
}

fn bench_credential() -> DeviceCredential {
    let mut secret = [0u8; 24];
    rand::rng().fill_bytes(&mut secret);
    DeviceCredential {
        device_id: "bench-device".into(),
        device_secret: secret.iter().map(|b| format!("{b:02x}")).collect(),
        registered_users: vec![BENCH_OWNER.into()],
    }
}

/// One full upload of the fixture through a fresh service and shaper.
async fn run_once(spec: &BenchSpec, fixture: &BenchFixture, run: usize, echo: &EchoServer) -> Result<RunSample, BenchError> {
    let latency = {
        let (profile, samples) = (spec.profile.clone(), spec.latency_samples);
        let echo_addr = echo.addr();
        tokio::task::spawn_blocking(move || profile_latency(&profile, echo_addr, samples))
        .await
        .map_err(std::io::Error::other)??
    };

    let scratch = tempfile::Builder::new().prefix("relay-bench-run-").tempdir()?;
    let credential = bench_credential();
    let service = Arc::new(StorageService::open(ServiceConfig::new(
        scratch.path().join("service"),
        vec![credential.clone()],
    ))?);
    let server = spawn_server(service.clone(), "127.0.0.1:0".parse().unwrap()).await?;
    let shaper = start_shaper(&spec.profile, server.addr)?;
    let client = Arc::new(ServiceClient::new(&shaper.url(), credential)?);
    client.authenticate().await?;
    let (journal, _) = Journal::open(&scratch.path().join("journal"))?;
    let uploader = Uploader::new(client, Some(Arc::new(journal)), spec.parallelism, RetryPolicy::default());

    let started = Instant::now();
    let results: Vec<_> = stream::iter(&fixture.files)
        .map(|f| {
            let mut manifest = f.manifest.clone();
            manifest.file_id = new_file_id();
            let uploader = uploader.clone();
            async move { uploader.upload_file(manifest, &f.path).await }
        })
        .buffer_unordered(spec.max_active_files)
        .collect()
        .await;
    let seconds = started.elapsed().as_secs_f64();
    for r in results {
        r?;
    }

    let objects = service.objects();
    if objects.len() != fixture.files.len() {
        return Err(BenchError::Integrity(format!(
            "{} objects committed for {} files",
            objects.len(),
            fixture.files.len()
        )));
    }
    for f in &fixture.files {
        let stored = objects.iter().find(|o| o.relative_path == f.manifest.relative_path);
        match stored {
            Some(o) if o.whole_digest == f.manifest.whole_digest && o.total_size == f.manifest.total_size => {}
            _ => {
                return Err(BenchError::Integrity(format!(
                    "{} missing or differs after upload",
                    f.manifest.relative_path
                )))
            }
        }
    }
    shaper.shutdown();
    server.shutdown().await?;
    drop(service);

    let bytes = fixture.total_bytes();
    Ok(RunSample {
        run,
        latency_ms: latency.median_ms,
        throughput_mbps: bytes as f64 / seconds / MEGABYTE,
        bytes,
        seconds,
    })
}

/// Run `spec.repetitions` sequential transfers of `fixture` and report
/// the medians. Any integrity failure aborts the bench.
pub async fn run_throughput_bench(spec: &BenchSpec, fixture: &BenchFixture, baseline_ms: f64) -> Result<BenchReport, BenchError> {
    spec.validate()?;
    if fixture.files.len() != spec.file_count || fixture.file_size != spec.file_size_bytes || fixture.chunk_size != spec.chunk_size {
        return Err(BenchError::InvalidSpec("fixture file size or chunk size differs from the bench settings".into()));
    }
    let echo = EchoServer::start()?;
    let mut runs = Vec::with_capacity(spec.repetitions);
    for run in 1..=spec.repetitions {
        let sample = run_once(spec, fixture, run, &echo).await?;
        tracing::info!(
            profile = %spec.profile.name,
            run,
            throughput_mbps = sample.throughput_mbps,
            latency_ms = sample.latency_ms,
            "bench run"
        );
        runs.push(sample);
    }
    let throughputs: Vec<f64> = runs.iter().map(|r| r.throughput_mbps).collect();
    let latencies: Vec<f64> = runs.iter().map(|r| r.latency_ms).collect();
    let spread = relative_spread(&throughputs);
    if spread >= SPREAD_WARNING {
        tracing::warn!(profile = %spec.profile.name, spread, "run-to-run throughput variation above 5%");
    }
    Ok(BenchReport {
        profile: spec.profile.name.clone(),
        effective_rtt_ms: spec.profile.effective_rtt_ms(),
        bandwidth_cap_mbps: spec.profile.bandwidth_cap_mbps,
        loopback_baseline_ms: baseline_ms,
        median_latency_ms: median(&latencies),
        median_throughput_mbps: median(&throughputs),
        relative_spread: spread,
        latency_relative_spread: relative_spread(&latencies),
        spread_warning: spread >= SPREAD_WARNING,
        run_samples: runs,
    })
}

/// Bench every profile with the same file set. `template` supplies
/// everything but the profile.
pub async fn run_suite(profiles: &[NetworkProfile], template: &BenchSpec, seed: u64) -> Result<Vec<BenchReport>, BenchError> {
    template.validate()?;
    let fixture = {
        let t = template.clone();
        tokio::task::spawn_blocking(move || BenchFixture::generate(t.file_count, t.file_size_bytes, t.chunk_size, seed))
            .await
            .map_err(std::io::Error::other)??
    };
    let samples = template.latency_samples;
    let baseline = tokio::task::spawn_blocking(move || crate::latency::loopback_baseline(samples))
        .await
        .map_err(std::io::Error::other)??;
    let mut reports = Vec::with_capacity(profiles.len());
    for profile in profiles {
        let spec = BenchSpec {
            profile: profile.clone(),
            ..template.clone()
        };
        reports.push(run_throughput_bench(&spec, &fixture, baseline).await?);
    }
    Ok(reports)
}

/// CSV with one line per run.
pub fn reports_csv(reports: &[BenchReport]) -> String {
    let mut out = String::from("profile,run,latency_ms,throughput_MBps\n");
    for r in reports {
        for s in &r.run_samples {
            out.push_str(&format!("{},{},{:.4},{:.4}\n", r.profile, s.run, s.latency_ms, s.throughput_mbps));
        }
    }
    out
}

// SPDX-License-Identifier: Apache-2.0

//! Application-level echo latency.

use std::io::{self, Read, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use serde::Serialize;
use thiserror::Error;

use crate::profile::NetworkProfile;
use crate::shaper::start_shaper;

pub const ECHO_PAYLOAD: usize = 64;
pub const DEFAULT_SAMPLES: usize = 5;
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(5);

#[derive(Debug, Error)]
pub enum LatencyError {
    #[error("endpoint {addr} unreachable: {source}")]
    Unreachable { addr: SocketAddr, source: io::Error },
    #[error("echo returned different bytes")]
    Garbled,
    #[error("at least one sample is required")]
    NoSamples,
}

/// Loopback server echoing whatever it receives.
pub struct EchoServer {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
}

impl EchoServer {
    pub fn start() -> io::Result<Self> {
        let listener = TcpListener::bind("127.0.0.1:0")?;
        let addr = listener.local_addr()?;
        let stop = Arc::new(AtomicBool::new(false));
        let flag = stop.clone();
        thread::Builder::new().name("echo".into()).spawn(move || {
            for conn in listener.incoming() {
                if flag.load(Ordering::SeqCst) {
                    break;
                }
                let Ok(mut conn) = conn else { continue };
                let _ = conn.set_nodelay(true);
                thread::spawn(move || {
                    let mut buf = [0u8; 4096];
                    while let Ok(n) = conn.read(&mut buf) {
                        if n == 0 || conn.write_all(&buf[..n]).is_err() {
                            break;
                        }
                    }
                    let _ = conn.shutdown(Shutdown::Both);
                });
            }
        })?;
        Ok(Self { addr, stop })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }
}

impl Drop for EchoServer {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        let _ = TcpStream::connect(self.addr);
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct LatencySample {
    pub samples_ms: Vec<f64>,
    pub median_ms: f64,
    pub relative_spread: f64,
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    if v.len() % 2 == 1 {
        v[mid]
    } else {
        (v[mid - 1] + v[mid]) / 2.0
    }
}

/// Largest deviation from the median, as a fraction of the median.
pub fn relative_spread(values: &[f64]) -> f64 {
    let m = median(values);
    if values.is_empty() || m == 0.0 {
        return 0.0;
    }
    values.iter().map(|v| (v - m).abs()).fold(0.0, f64::max) / m.abs()
}

/// Median of `samples` round trips of a 64-byte message to an echo
/// endpoint, after one unrecorded warm-up exchange.
pub fn measure_latency(endpoint: SocketAddr, samples: usize, timeout: Duration) -> Result<LatencySample, LatencyError> {
    if samples == 0 {
        return Err(LatencyError::NoSamples);
    }
    let unreachable = |source| LatencyError::Unreachable { addr: endpoint, source };
    let mut conn = TcpStream::connect_timeout(&endpoint, timeout).map_err(unreachable)?;
    conn.set_nodelay(true).map_err(unreachable)?;
    conn.set_read_timeout(Some(timeout)).map_err(unreachable)?;
    conn.set_write_timeout(Some(timeout)).map_err(unreachable)?;

    let mut round_trip = |seq: u8| -> Result<f64, LatencyError> {
        let out = [seq; ECHO_PAYLOAD];
        let mut back = [0u8; ECHO_PAYLOAD];
        let started = Instant::now();
        conn.write_all(&out).map_err(unreachable)?;
        conn.read_exact(&mut back).map_err(unreachable)?;
        let elapsed = started.elapsed();
        if back != out {
            return Err(LatencyError::Garbled);
        }
        Ok(elapsed.as_secs_f64() * 1000.0)
    };
    round_trip(0)?;
    let samples_ms = (1..=samples).map(|i| round_trip(i as u8)).collect::<Result<Vec<_>, _>>()?;
    Ok(LatencySample {
        median_ms: median(&samples_ms),
        relative_spread: relative_spread(&samples_ms),
        samples_ms,
    })
}

/// Round trip through a shaper with no delay and no cap: the cost of the
/// relay itself, subtracted before comparing against a profile's RTT.
pub fn loopback_baseline(samples: usize) -> Result<f64, LatencyError> {
    let echo = EchoServer::start().map_err(|source| LatencyError::Unreachable {
        addr: "127.0.0.1:0".parse().unwrap(),
        source,
    })?;
    profile_latency(&NetworkProfile::passthrough(), echo.addr(), samples).map(|s| s.median_ms)
}

/// Echo latency through a fresh shaper for `profile`.
pub fn profile_latency(profile: &NetworkProfile, echo: SocketAddr, samples: usize) -> Result<LatencySample, LatencyError> {
    let shaper = start_shaper(profile, echo).map_err(|source| LatencyError::Unreachable { addr: echo, source })?;
    measure_latency(shaper.local_addr(), samples, DEFAULT_TIMEOUT)
}

// SPDX-License-Identifier: Apache-2.0

//! Userspace TCP relay that injects one-way delay and enforces a bandwidth
//! cap on everything passing through it.
//!
//! Each direction of each connection is a reader thread feeding a writer
//! thread. The reader pays for what it read at the direction's token
//! bucket (shared by all connections, like a shared link) and stamps the
//! segment with a due time one one-way delay later; the writer holds it
//! until then. Threads rather than async timers, with a 1 ns timer slack,
//! keep sub-millisecond delays accurate.

use std::io::{self, Read, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::mpsc::{sync_channel, Receiver, SyncSender};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use crate::profile::NetworkProfile;

const MAX_SEGMENT: usize = 256 * 1024;
const MIN_SEGMENT: usize = 4 * 1024;
/// Segments queued per direction before the reader blocks.
const QUEUE_DEPTH: usize = 512;
/// Bucket depth, in seconds of the cap.
const BUCKET_SECONDS: f64 = 0.2;

fn tighten_timer_slack() {
    // SAFETY: PR_SET_TIMERSLACK only affects the calling thread.
    unsafe {
        libc::prctl(libc::PR_SET_TIMERSLACK, 1 as libc::c_ulong, 0, 0, 0);
    }
}

/// Debt-based token bucket. Starts empty so that no window carries more
/// than the cap plus whatever refilled inside it.
#[derive(Debug)]
pub struct TokenBucket {
    rate: f64,
    depth: f64,
    state: Mutex<(f64, Instant)>,
}

impl TokenBucket {
    pub fn new(bytes_per_sec: f64) -> Self {
        Self {
            rate: bytes_per_sec,
            depth: bytes_per_sec * BUCKET_SECONDS,
            state: Mutex::new((0.0, Instant::now())),
        }
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    /// Charge `n` bytes; returns how long the caller must wait before
    /// sending them.
    pub fn take(&self, n: usize) -> Duration {
        let mut s = self.state.lock().unwrap();
        let now = Instant::now();
        let refill = now.duration_since(s.1).as_secs_f64() * self.rate;
        s.0 = (s.0 + refill).min(self.depth) - n as f64;
        s.1 = now;
        if s.0 >= 0.0 {
            Duration::ZERO
        } else {
            Duration::from_secs_f64(-s.0 / self.rate)
        }
    }

    /// Largest read worth about 2 ms at this rate.
    fn segment_size(&self) -> usize {
        ((self.rate * 0.002) as usize).clamp(MIN_SEGMENT, MAX_SEGMENT)
    }
}

#[derive(Debug, Default)]
pub struct ShaperStats {
    pub connections: AtomicU64,
    pub bytes_upstream: AtomicU64,
    pub bytes_downstream: AtomicU64,
}

enum Segment {
    Data(Vec<u8>, Instant),
    Eof(Instant),
}

struct Link {
    delay: Duration,
    bucket: Option<TokenBucket>,
}

pub struct Shaper {
    addr: SocketAddr,
    profile: NetworkProfile,
    stop: Arc<AtomicBool>,
    streams: Arc<Mutex<Vec<TcpStream>>>,
    stats: Arc<ShaperStats>,
    acceptor: Option<JoinHandle<()>>,
}

/// Start a relay on an ephemeral loopback port forwarding to `upstream`.
pub fn start_shaper(profile: &NetworkProfile, upstream: SocketAddr) -> io::Result<Shaper> {
    Shaper::bind(profile, upstream, "127.0.0.1:0".parse().unwrap())
}

impl Shaper {
    pub fn bind(profile: &NetworkProfile, upstream: SocketAddr, listen: SocketAddr) -> io::Result<Self> {
        let listener = TcpListener::bind(listen)?;
        let addr = listener.local_addr()?;
        let delay = profile.one_way_delay();
        let make_link = || {
            Arc::new(Link {
                delay,
                bucket: profile.cap_bytes_per_sec().map(TokenBucket::new),
            })
        };
        let (up, down) = (make_link(), make_link());
        let stop = Arc::new(AtomicBool::new(false));
        let streams = Arc::new(Mutex::new(Vec::new()));
        let stats = Arc::new(ShaperStats::default());

        let acceptor = {
            let (stop, streams, stats) = (stop.clone(), streams.clone(), stats.clone());
            thread::Builder::new().name(format!("shaper-{}", profile.name)).spawn(move || {
                for client in listener.incoming() {
                    if stop.load(Ordering::SeqCst) {
                        break;
                    }
                    let Ok(client) = client else { continue };
                    let server = match TcpStream::connect(upstream) {
                        Ok(s) => s,
                        Err(e) => {
                            tracing::warn!(%upstream, error = %e, "shaper upstream unreachable");
                            continue;
                        }
                    };
                    let _ = client.set_nodelay(true);
                    let _ = server.set_nodelay(true);
                    stats.connections.fetch_add(1, Ordering::Relaxed);
                    if let (Ok(c), Ok(s)) = (client.try_clone(), server.try_clone()) {
                        streams.lock().unwrap().extend([c, s]);
                    }
                    if let Err(e) = relay(&client, &server, up.clone(), stats.clone(), true)
                        .and_then(|_| relay(&server, &client, down.clone(), stats.clone(), false))
                    {
                        tracing::warn!(error = %e, "shaper could not start relay threads");
                    }
                }
            })?
        };

        Ok(Self {
            addr,
            profile: profile.clone(),
            stop,
            streams,
            stats,
            acceptor: Some(acceptor),
        })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn profile(&self) -> &NetworkProfile {
        &self.profile
    }

    pub fn stats(&self) -> &ShaperStats {
        &self.stats
    }

    pub fn shutdown(mut self) {
        self.stop_now();
    }

    fn stop_now(&mut self) {
        if self.stop.swap(true, Ordering::SeqCst) {
            return;
        }
        // wake the acceptor
        let _ = TcpStream::connect(self.addr);
        for s in self.streams.lock().unwrap().drain(..) {
            let _ = s.shutdown(Shutdown::Both);
        }
        if let Some(h) = self.acceptor.take() {
            let _ = h.join();
        }
    }
}

impl Drop for Shaper {
    fn drop(&mut self) {
        self.stop_now();
    }
}

fn relay(from: &TcpStream, to: &TcpStream, link: Arc<Link>, stats: Arc<ShaperStats>, upstream: bool) -> io::Result<()> {
    let (tx, rx) = sync_channel(QUEUE_DEPTH);
    let reader = from.try_clone()?;
    let writer = to.try_clone()?;
    let read_link = link.clone();
    thread::Builder::new()
        .name("shaper-read".into())
        .spawn(move || read_side(reader, read_link, tx, stats, upstream))?;
    thread::Builder::new()
        .name("shaper-write".into())
        .spawn(move || write_side(writer, rx))?;
    Ok(())
}

fn read_side(mut from: TcpStream, link: Arc<Link>, tx: SyncSender<Segment>, stats: Arc<ShaperStats>, upstream: bool) {
    tighten_timer_slack();
    let segment = link.bucket.as_ref().map_or(MAX_SEGMENT, TokenBucket::segment_size);
    let mut buf = vec![0u8; segment];
    loop {
        let n = match from.read(&mut buf) {
            Ok(0) | Err(_) => {
                let _ = tx.send(Segment::Eof(Instant::now() + link.delay));
                return;
            }
            Ok(n) => n,
        };
        if let Some(bucket) = &link.bucket {
            let wait = bucket.take(n);
            if !wait.is_zero() {
                thread::sleep(wait);
            }
        }
        let counter = if upstream {
            &stats.bytes_upstream
        } else {
            &stats.bytes_downstream
        };
        counter.fetch_add(n as u64, Ordering::Relaxed);
        if tx.send(Segment::Data(buf[..n].to_vec(), Instant::now() + link.delay)).is_err() {
            let _ = from.shutdown(Shutdown::Read);
            return;
        }
    }
}

fn write_side(mut to: TcpStream, rx: Receiver<Segment>) {
    tighten_timer_slack();
    let hold = |due: Instant| {
        let now = Instant::now();
        if due > now {
            thread::sleep(due - now);
        }
    };
    while let Ok(seg) = rx.recv() {
        match seg {
            Segment::Data(bytes, due) => {
                hold(due);
                if to.write_all(&bytes).is_err() {
                    // peer gone: drain so the reader is not blocked forever
                    let _ = to.shutdown(Shutdown::Both);
                    while rx.recv().is_ok() {}
                    return;
                }
            }
            Segment::Eof(due) => {
                hold(due);
                let _ = to.shutdown(Shutdown::Write);
                return;
            }
        }
    }
}

// SPDX-License-Identifier: Apache-2.0

//! Timing-sensitive checks of the shaper. They share one CPU, so they
//! take a lock and run one at a time.

use std::io::{Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::{Arc, Mutex, MutexGuard};
use std::thread;
use std::time::{Duration, Instant};

use proptest::prelude::*;
use relay_agent::{RetryPolicy, ServiceClient, Uploader};
use relay_core::manifest::build_manifest;
use relay_core::{Category, DeviceCredential};
use relay_harness::{builtin_catalog, profile_latency, start_shaper, EchoServer, NetworkProfile, Route};
use relay_service::{spawn_server, ServiceConfig, StorageService};

static SERIAL: Mutex<()> = Mutex::new(());

fn serial() -> MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

/// Sink that timestamps every read; returns (arrival time, bytes) pairs.
fn sink() -> (SocketAddr, thread::JoinHandle<Vec<(Instant, usize)>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let handle = thread::spawn(move || {
        let (mut conn, _) = listener.accept().unwrap();
        let mut buf = vec![0u8; 1 << 16];
        let mut log = Vec::new();
        loop {
            match conn.read(&mut buf) {
                Ok(0) | Err(_) => break,
                Ok(n) => log.push((Instant::now(), n)),
            }
        }
        log
    });
    (addr, handle)
}

/// Push `bytes` through a shaper for `profile`; MB/s seen by the receiver
/// plus the arrival log.
fn bulk(profile: &NetworkProfile, bytes: usize) -> (f64, Vec<(Instant, usize)>) {
    let (addr, handle) = sink();
    let shaper = start_shaper(profile, addr).unwrap();
    let mut conn = TcpStream::connect(shaper.local_addr()).unwrap();
    let block = vec![0x5au8; 1 << 16];
    let started = Instant::now();
    let mut left = bytes;
    while left > 0 {
        let n = left.min(block.len());
        conn.write_all(&block[..n]).unwrap();
        left -= n;
    }
    conn.shutdown(std::net::Shutdown::Write).unwrap();
    let log = handle.join().unwrap();
    let received: usize = log.iter().map(|(_, n)| n).sum();
    assert_eq!(received, bytes);
    let elapsed = log.last().unwrap().0.duration_since(started).as_secs_f64();
    (bytes as f64 / elapsed / 1e6, log)
}

#[test]
fn forty_ms_profile_reads_back_forty_ms() {
    let _g = serial();
    let echo = EchoServer::start().unwrap();
    let sample = profile_latency(&NetworkProfile::direct("wan", 40.0, None), echo.addr(), 5).unwrap();
    assert!((sample.median_ms - 40.0).abs() < 40.0 * 0.05, "{sample:?}");
}

#[test]
fn gateway_adds_exactly_its_penalty() {
    let _g = serial();
    let echo = EchoServer::start().unwrap();
    let direct = NetworkProfile::direct("d", 3.0, None);
    let gateway = NetworkProfile {
        name: "g".into(),
        route: Route::Gateway,
        gateway_penalty_ms: 5.0,
        ..direct.clone()
    };
    let d = profile_latency(&direct, echo.addr(), 5).unwrap().median_ms;
    let g = profile_latency(&gateway, echo.addr(), 5).unwrap().median_ms;
    assert!(g > d);
    assert!(((g - d) - 5.0).abs() < 5.0 * 0.15, "direct {d} gateway {g}");
}

#[test]
fn cap_holds_over_every_one_second_window() {
    let _g = serial();
    let cap = 10.0;
    let (rate, log) = bulk(&NetworkProfile::direct("capped", 0.0, Some(cap)), 30_000_000);
    assert!(rate <= cap * 1.05, "sustained {rate} MB/s");
    assert!(rate >= cap * 0.9, "sustained {rate} MB/s");
    // sliding one-second windows starting at every arrival
    let mut worst: f64 = 0.0;
    let mut j = 0;
    let mut in_window: usize = 0;
    for i in 0..log.len() {
        while j < log.len() && log[j].0.duration_since(log[i].0) < Duration::from_secs(1) {
            in_window += log[j].1;
            j += 1;
        }
        worst = worst.max(in_window as f64 / 1e6);
        in_window -= log[i].1;
    }
    assert!(worst <= cap * 1.05, "a one-second window carried {worst} MB");
}

fn upload_rate(url: &str, files: &[(std::path::PathBuf, relay_core::FileManifest)], cred: &DeviceCredential) -> f64 {
    let rt = tokio::runtime::Runtime::new().unwrap();
    rt.block_on(async {
        let client = Arc::new(ServiceClient::new(url, cred.clone()).unwrap());
        client.authenticate().await.unwrap();
        let up = Uploader::new(client, None, 4, RetryPolicy::default());
        let started = Instant::now();
        let mut bytes = 0;
        for (path, m) in files {
            let mut m = m.clone();
            m.file_id = relay_core::manifest::new_file_id();
            m.relative_path = format!("{}-{}", m.relative_path, m.file_id);
            bytes += m.total_size;
            up.upload_file(m, path).await.unwrap();
        }
        bytes as f64 / started.elapsed().as_secs_f64() / 1e6
    })
}

#[test]
fn passthrough_costs_under_ten_percent_of_the_upload_path() {
    let _g = serial();
    let dir = tempfile::tempdir().unwrap();
    let cred = DeviceCredential {
        device_id: "d".into(),
        device_secret: "s3cret-s3cret-s3cret".into(),
        registered_users: vec!["u".into()],
    };
    let mut files = Vec::new();
    for i in 0..4 {
        let path = dir.path().join(format!("f{i}"));
        let data: Vec<u8> = (0..(16u32 << 20)).map(|x| (x.wrapping_mul(2654435761) >> 13) as u8).collect();
        std::fs::write(&path, &data).unwrap();
        files.push((path.clone(), build_manifest(&path, "u", &format!("f{i}"), Category::Experimental, 2 << 20).unwrap()));
    }
    let rt = tokio::runtime::Runtime::new().unwrap();
    let server = rt.block_on(async {
        let svc = Arc::new(StorageService::open(ServiceConfig::new(dir.path().join("svc"), vec![cred.clone()])).unwrap());
        spawn_server(svc, "127.0.0.1:0".parse().unwrap()).await.unwrap()
    });
    let shaper = start_shaper(&NetworkProfile::passthrough(), server.addr).unwrap();
    // alternate to share any drift, best of three each
    let mut direct: f64 = 0.0;
    let mut shaped: f64 = 0.0;
    for _ in 0..3 {
        direct = direct.max(upload_rate(&server.url(), &files, &cred));
        shaped = shaped.max(upload_rate(&shaper.url(), &files, &cred));
    }
    assert!(shaped >= direct * 0.9, "direct {direct:.1} MB/s, through relay {shaped:.1} MB/s");
}

#[test]
fn cap_ratios_survive_uniform_scaling() {
    let _g = serial();
    let caps = [60.0, 24.0, 8.0];
    let measure = |scale: f64| -> Vec<f64> {
        caps.iter()
            .map(|c| {
                let p = NetworkProfile::direct("p", 1.0, Some(c * scale));
                // about 0.6 s of traffic at each cap
                bulk(&p, (c * scale * 0.6e6) as usize).0
            })
            .collect()
    };
    let full = measure(1.0);
    for scale in [0.5, 0.25] {
        let scaled = measure(scale);
        for i in 1..caps.len() {
            let r_full = full[0] / full[i];
            let r_scaled = scaled[0] / scaled[i];
            assert!((r_scaled / r_full - 1.0).abs() < 0.2, "scale {scale}: {r_scaled} vs {r_full}");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 8, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn throughput_ranks_like_caps(low in 1.0f64..20.0, factor in 1.25f64..3.0) {
        let _g = serial();
        let high = low * factor;
        let bytes = (low * 0.4e6) as usize;
        let (slow, _) = bulk(&NetworkProfile::direct("lo", 2.0, Some(low)), bytes);
        let (fast, _) = bulk(&NetworkProfile::direct("hi", 2.0, Some(high)), bytes);
        prop_assert!(fast > slow, "cap {high:.2} gave {fast:.2}, cap {low:.2} gave {slow:.2}");
    }
}

#[test]
fn builtin_catalog_latencies_track_configuration() {
    let _g = serial();
    let echo = EchoServer::start().unwrap();
    let baseline = relay_harness::loopback_baseline(5).unwrap();
    for p in builtin_catalog() {
        let net = profile_latency(&p, echo.addr(), 5).unwrap().median_ms - baseline;
        let want = p.effective_rtt_ms();
        if want >= 1.0 {
            assert!((net - want).abs() <= want * 0.15, "{}: {net} vs {want}", p.name);
        } else {
            assert!((net - want).abs() <= 0.5, "{}: {net} vs {want}", p.name);
        }
    }
}

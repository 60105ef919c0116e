// SPDX-License-Identifier: Apache-2.0

#![allow(dead_code)]

use std::fs::{File, FileTimes};
use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, SystemTime};

use relay_core::DeviceCredential;
use relay_service::{spawn_server, ServerHandle, ServiceConfig, StorageService};

pub fn credential(users: &[&str]) -> DeviceCredential {
    DeviceCredential {
        device_id: "bench-pc-01".into(),
        device_secret: "8c1d0f4e9a7b6c5d4e3f2a1b0c9d8e7f".into(),
        registered_users: users.iter().map(|u| u.to_string()).collect(),
    }
}

pub async fn start_service(root: &Path, ttl: Duration) -> ServerHandle {
    let mut config = ServiceConfig::new(root, vec![credential(&["alice", "bob"])]);
    config.token_ttl = ttl;
    let service = Arc::new(StorageService::open(config).unwrap());
    spawn_server(service, "127.0.0.1:0".parse().unwrap()).await.unwrap()
}

/// Deterministic non-periodic bytes.
pub fn payload(len: usize, seed: u64) -> Vec<u8> {
    let mut x = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
    (0..len)
        .map(|_| {
            x = x.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (x >> 33) as u8
        })
        .collect()
}

/// Write a file whose mtime is already `age` in the past.
pub fn stage(path: &Path, bytes: &[u8], age: Duration) {
    std::fs::create_dir_all(path.parent().unwrap()).unwrap();
    std::fs::write(path, bytes).unwrap();
    File::options()
        .write(true)
        .open(path)
        .unwrap()
        .set_times(FileTimes::new().set_modified(SystemTime::now() - age))
        .unwrap();
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    relay_core::ContentDigest::of(bytes).as_hex().to_owned()
}

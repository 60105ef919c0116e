// SPDX-License-Identifier: Apache-2.0
#![allow(dead_code)]

use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, ExitStatus, Stdio};
use std::time::{Duration, Instant};

use relay_core::DeviceCredential;

pub const BIN: &str = env!("CARGO_BIN_EXE_relayctl");

pub fn relayctl() -> Command {
    let mut cmd = Command::new(BIN);
    for var in ["RELAY_CONFIG", "RELAY_SERVER_URL", "RELAY_CREDENTIAL_FILE", "RELAY_LOG", "RELAY_DATA_ROOT"] {
        cmd.env_remove(var);
    }
    cmd.env("RELAY_LOG", "warn");
    cmd
}

pub fn credential() -> DeviceCredential {
    DeviceCredential {
        device_id: "bench-pc-01".into(),
        device_secret: "correct-horse-battery".into(),
        registered_users: vec!["alice".into(), "bob".into()],
    }
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) {
    std::fs::write(path, serde_json::to_vec_pretty(value).unwrap()).unwrap();
}

/// Credential file plus the matching `devices.json` in `data_root`.
pub fn provision(dir: &Path, data_root: &Path) -> PathBuf {
    std::fs::create_dir_all(data_root).unwrap();
    write_json(&data_root.join("devices.json"), &vec![credential()]);
    let cred = dir.join("device.json");
    write_json(&cred, &credential());
    cred
}

pub struct Server {
    pub child: Child,
    pub url: String,
}

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// `relayctl serve` on an ephemeral port; returns once it is listening.
pub fn serve(data_root: &Path, extra: &[&str]) -> Server {
    let mut child = relayctl()
        .args(["serve", "--listen", "127.0.0.1:0", "--data-root"])
        .arg(data_root)
        .args(extra)
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stdout.as_mut().unwrap()).read_line(&mut line).unwrap();
    let url = line.trim().strip_prefix("listening on ").unwrap_or_else(|| panic!("unexpected banner {line:?}")).to_string();
    Server { child, url }
}

pub fn sigterm(child: &Child) {
    // SAFETY: plain kill(2) on our own child
    unsafe {
        libc::kill(child.id() as libc::pid_t, libc::SIGTERM);
    }
}

pub fn wait_timeout(child: &mut Child, limit: Duration) -> Option<ExitStatus> {
    let deadline = Instant::now() + limit;
    loop {
        if let Some(status) = child.try_wait().unwrap() {
            return Some(status);
        }
        if Instant::now() > deadline {
            return None;
        }
        std::thread::sleep(Duration::from_millis(10));
    }
}

pub fn wait_for(limit: Duration, mut cond: impl FnMut() -> bool) -> bool {
    let deadline = Instant::now() + limit;
    while Instant::now() < deadline {
        if cond() {
            return true;
        }
        std::thread::sleep(Duration::from_millis(10));
    }
    cond()
}

pub fn payload(len: usize, seed: u64) -> Vec<u8> {
    let mut x = seed.wrapping_add(0x9e37_79b9_7f4a_7c15);
    (0..len)
        .map(|_| {
            x = x.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (x >> 56) as u8
        })
        .collect()
}

pub fn sha256_hex(data: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    hex_lower(&Sha256::digest(data))
}

fn hex_lower(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

// SPDX-License-Identifier: Apache-2.0

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use clap::Args;
use relay_core::DeviceCredential;
use relay_service::{serve, OrgMap, QuotaPolicy, ServiceConfig, StorageService, DEFAULT_TOKEN_TTL};

use crate::config::GlobalConfig;
use crate::units::{parse_duration, parse_size};
use crate::{CmdResult, Failure, Shutdown};

pub const DEVICES_FILE: &str = "devices.json";

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Object store root (also RELAY_DATA_ROOT)
    #[arg(long, value_name = "DIR")]
    pub data_root: Option<PathBuf>,
    #[arg(long, value_name = "ADDR", default_value = "127.0.0.1:8080")]
    pub listen: SocketAddr,
    /// Per-user storage limit
    #[arg(long, value_name = "SIZE", value_parser = parse_size)]
    pub quota: Option<u64>,
    /// Let uploads past the quota through with a warning
    #[arg(long)]
    pub soft_quota: bool,
    /// Registered devices, a JSON array of credentials [default: <data-root>/devices.json]
    #[arg(long, value_name = "FILE")]
    pub devices: Option<PathBuf>,
    #[arg(long, value_name = "DURATION", default_value = "1h", value_parser = parse_duration)]
    pub token_ttl: Duration,
    /// JSON object mapping user id to organization, for org counts in reports
    #[arg(long, value_name = "FILE")]
    pub orgs: Option<PathBuf>,
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path, what: &str) -> Result<T, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::Usage(format!("cannot read {what} {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Failure::Usage(format!("invalid {what} {}: {e}", path.display())))
}

pub fn load_orgs(path: &Path) -> Result<OrgMap, Failure> {
    read_json(path, "org map")
}

pub async fn run(args: ServeArgs, global: &GlobalConfig, shutdown: Shutdown) -> CmdResult {
    let data_root = global
        .data_root
        .get()
        .cloned()
        .ok_or_else(|| Failure::Usage("no data root: pass --data-root or set RELAY_DATA_ROOT".into()))?;
    std::fs::create_dir_all(&data_root).map_err(|e| Failure::Runtime(format!("cannot create {}: {e}", data_root.display())))?;

    let devices: Vec<DeviceCredential> = match &args.devices {
        Some(path) => read_json(path, "device registry")?,
        None => {
            let path = data_root.join(DEVICES_FILE);
            if path.exists() {
                read_json(&path, "device registry")?
            } else {
                tracing::warn!(path = %path.display(), "no device registry; every token request will be refused");
                Vec::new()
            }
        }
    };
    let orgs = args.orgs.as_deref().map(load_orgs).transpose()?;

    let mut config = ServiceConfig::new(&data_root, devices);
    config.token_ttl = if args.token_ttl.is_zero() { DEFAULT_TOKEN_TTL } else { args.token_ttl };
    config.quota = QuotaPolicy {
        per_user_limit: args.quota.unwrap_or(QuotaPolicy::default().per_user_limit),
        hard: !args.soft_quota,
    };
    config.orgs = orgs;

    let service = StorageService::open(config).map_err(|e| Failure::Runtime(format!("cannot open {}: {e}", data_root.display())))?;
    let listener = tokio::net::TcpListener::bind(args.listen)
        .await
        .map_err(|e| Failure::Runtime(format!("cannot listen on {}: {e}", args.listen)))?;
    let addr = listener.local_addr().map_err(|e| Failure::Runtime(e.to_string()))?;
    println!("listening on http://{addr}");
    tracing::info!(%addr, data_root = %data_root.display(), "storage service up");
    serve(listener, Arc::new(service), shutdown.wait())
        .await
        .map_err(|e| Failure::Runtime(format!("server error: {e}")))
}

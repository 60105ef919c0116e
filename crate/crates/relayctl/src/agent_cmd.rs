// SPDX-License-Identifier: Apache-2.0

use std::path::PathBuf;
use std::time::Duration;

use clap::Args;
use relay_agent::{Agent, AgentConfig};
use relay_core::{Category, DeviceCredential};

use crate::config::GlobalConfig;
use crate::units::{parse_duration, parse_size};
use crate::{print_json, CmdResult, Failure, Shutdown};

#[derive(Debug, Args)]
pub struct AgentRunArgs {
    /// Staging volume: one directory per user
    #[arg(long, value_name = "DIR")]
    pub staging: PathBuf,
    /// Storage service base URL (also RELAY_SERVER_URL)
    #[arg(long, value_name = "URL")]
    pub server: Option<String>,
    /// Device credential JSON (also RELAY_CREDENTIAL_FILE)
    #[arg(long, value_name = "FILE")]
    pub credential: Option<PathBuf>,
    #[arg(long, value_name = "SIZE", default_value = "8MiB", value_parser = parse_size)]
    pub chunk_size: u64,
    /// Chunk uploads in flight per file
    #[arg(long, default_value_t = relay_agent::DEFAULT_PARALLELISM, value_parser = clap::builder::RangedU64ValueParser::<usize>::new().range(1..))]
    pub parallelism: usize,
    /// Quiet period before a staged file counts as fully copied
    #[arg(long, value_name = "DURATION", default_value = "5s", value_parser = parse_duration)]
    pub stability_window: Duration,
    /// Journal file [default: <staging>/.relay-journal]
    #[arg(long, value_name = "FILE")]
    pub journal: Option<PathBuf>,
    #[arg(long, value_name = "DURATION", default_value = "1s", value_parser = parse_duration)]
    pub scan_interval: Duration,
    /// Files uploaded concurrently
    #[arg(long, default_value_t = relay_agent::DEFAULT_MAX_ACTIVE_FILES, value_parser = clap::builder::RangedU64ValueParser::<usize>::new().range(1..))]
    pub max_active_files: usize,
    /// Category for files outside an experimental/theoretical/uncategorized directory
    #[arg(long, default_value = "experimental", value_parser = parse_category)]
    pub default_category: Category,
}

fn parse_category(s: &str) -> Result<Category, String> {
    match s {
        "experimental" => Ok(Category::Experimental),
        "theoretical" => Ok(Category::Theoretical),
        "uncategorized" => Ok(Category::Uncategorized),
        _ => Err("expected experimental, theoretical or uncategorized".into()),
    }
}

pub fn load_credential(path: &std::path::Path) -> Result<DeviceCredential, Failure> {
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Err(Failure::Usage(format!("credential file {} not found", path.display())));
        }
        Err(e) => return Err(Failure::Usage(format!("cannot read credential file {}: {e}", path.display()))),
    };
    serde_json::from_str(&text).map_err(|e| Failure::Usage(format!("invalid credential file {}: {e}", path.display())))
}

pub async fn run(args: AgentRunArgs, global: &GlobalConfig, shutdown: Shutdown) -> CmdResult {
    let server = global
        .server_url
        .get()
        .cloned()
        .ok_or_else(|| Failure::Usage("no server URL: pass --server or set RELAY_SERVER_URL".into()))?;
    let cred_path = global
        .credential_path
        .get()
        .cloned()
        .ok_or_else(|| Failure::Usage("no credential: pass --credential or set RELAY_CREDENTIAL_FILE".into()))?;
    let credential = load_credential(&cred_path)?;
    if !args.staging.is_dir() {
        return Err(Failure::Usage(format!("staging directory {} does not exist", args.staging.display())));
    }
    if args.chunk_size == 0 {
        return Err(Failure::Usage("--chunk-size must be positive".into()));
    }

    let mut config = AgentConfig::new(&args.staging, server, credential);
    if let Some(j) = args.journal {
        config.journal_path = j;
    }
    config.chunk_size = args.chunk_size;
    config.parallelism = args.parallelism;
    config.stability_window = args.stability_window;
    config.scan_interval = args.scan_interval;
    config.max_active_files = args.max_active_files;
    config.default_category = args.default_category;

    let agent = Agent::new(config).map_err(|e| Failure::Runtime(e.to_string()))?;
    tracing::info!(staging = %args.staging.display(), "agent started");
    let summary = agent.run(shutdown.wait()).await.map_err(|e| Failure::Runtime(e.to_string()))?;
    print_json(&serde_json::json!({
        "committed": summary.committed.len(),
        "failed": summary.failed,
        "routing_warnings": summary.warnings.len(),
        "resumed_at_start": summary.reconcile.resumed.len(),
        "abandoned_at_start": summary.reconcile.abandoned.len(),
    }));
    Ok(())
}

// SPDX-License-Identifier: Apache-2.0

//! `relayctl`: one binary for the upload agent, the storage service, the
//! network benchmark and usage reports.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage error, 3 assertion
//! failure (`bench --assert-ordering`).

mod agent_cmd;
mod bench_cmd;
mod config;
mod serve_cmd;
mod stats_cmd;
mod units;

use std::io::IsTerminal;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::config::{GlobalConfig, Overrides};

#[derive(Debug, Parser)]
#[command(name = "relayctl", version, about = "Relay agent, storage service, network bench and usage stats")]
struct Cli {
    /// TOML config file (also RELAY_CONFIG)
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Log level: error, warn, info, debug or trace (also RELAY_LOG)
    #[arg(long, global = true, value_name = "LEVEL")]
    log_level: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Upload agent for a staging volume
    Agent {
        #[command(subcommand)]
        command: AgentCommand,
    },
    /// Run the storage service
    Serve(serve_cmd::ServeArgs),
    /// Latency and throughput benchmark over shaped network profiles
    Bench(bench_cmd::BenchArgs),
    /// Usage report from a ledger file or a running service
    Stats(stats_cmd::StatsArgs),
    /// Inspect configuration
    Config {
        #[command(subcommand)]
        command: ConfigCommand,
    },
}

#[derive(Debug, Subcommand)]
enum AgentCommand {
    /// Watch the staging volume and upload settled files until signaled
    Run(agent_cmd::AgentRunArgs),
}

#[derive(Debug, Subcommand)]
enum ConfigCommand {
    /// Print the effective configuration and where each value came from
    Show(ShowArgs),
}

#[derive(Debug, clap::Args)]
struct ShowArgs {
    #[arg(long, value_name = "URL")]
    server: Option<String>,
    #[arg(long, value_name = "FILE")]
    credential: Option<PathBuf>,
    #[arg(long, value_name = "DIR")]
    data_root: Option<PathBuf>,
}

#[derive(Debug, thiserror::Error)]
pub enum Failure {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Runtime(String),
    #[error("{0}")]
    Assertion(String),
}

impl Failure {
    fn exit_code(&self) -> u8 {
        match self {
            Failure::Runtime(_) => 1,
            Failure::Usage(_) => 2,
            Failure::Assertion(_) => 3,
        }
    }
}

pub type CmdResult = Result<(), Failure>;

impl Command {
    fn overrides(&self) -> Overrides {
        let mut o = Overrides::default();
        match self {
            Command::Agent {
                command: AgentCommand::Run(a),
            } => {
                o.server_url = a.server.clone();
                o.credential_path = a.credential.clone();
            }
            Command::Serve(a) => o.data_root = a.data_root.clone(),
            Command::Stats(a) => {
                o.server_url = a.server.clone();
                o.data_root = a.data_root.clone();
            }
            Command::Config {
                command: ConfigCommand::Show(a),
            } => {
                o.server_url = a.server.clone();
                o.credential_path = a.credential.clone();
                o.data_root = a.data_root.clone();
            }
            Command::Bench(_) => {}
        }
        o
    }
}

fn init_logging(level: &str) {
    let max = level.parse::<tracing::Level>().unwrap_or(tracing::Level::INFO);
    let _ = tracing_subscriber::fmt().with_max_level(max).with_ansi(std::io::stderr().is_terminal()).with_writer(std::io::stderr).try_init();
}

fn run(cli: Cli) -> CmdResult {
    let mut overrides = cli.command.overrides();
    overrides.config = cli.config;
    overrides.log_level = cli.log_level;
    let global = GlobalConfig::from_process_env(overrides).map_err(|e| Failure::Usage(e.to_string()))?;
    init_logging(global.log_level.get().map_or(config::DEFAULT_LOG_LEVEL, String::as_str));

    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| Failure::Runtime(format!("cannot start runtime: {e}")))?;
    let shutdown = runtime
        .block_on(async { Shutdown::install() })
        .map_err(|e| Failure::Runtime(format!("cannot install signal handlers: {e}")))?;
    match cli.command {
        Command::Agent {
            command: AgentCommand::Run(args),
        } => runtime.block_on(agent_cmd::run(args, &global, shutdown)),
        Command::Serve(args) => runtime.block_on(serve_cmd::run(args, &global, shutdown)),
        Command::Bench(args) => runtime.block_on(bench_cmd::run(args, shutdown)),
        Command::Stats(args) => runtime.block_on(stats_cmd::run(args, &global)),
        Command::Config {
            command: ConfigCommand::Show(_),
        } => {
            print_json(&global);
            Ok(())
        }
    }
}

pub fn print_json<T: serde::Serialize>(value: &T) {
    println!("{}", serde_json::to_string_pretty(value).expect("serializable"));
}

/// SIGTERM and SIGINT handlers, installed before any work starts so that
/// an early signal still means a clean shutdown rather than the default
/// action.
pub struct Shutdown {
    #[cfg(unix)]
    term: tokio::signal::unix::Signal,
    #[cfg(unix)]
    int: tokio::signal::unix::Signal,
}

impl Shutdown {
    fn install() -> std::io::Result<Self> {
        #[cfg(unix)]
        {
            use tokio::signal::unix::{signal, SignalKind};
            Ok(Self {
                term: signal(SignalKind::terminate())?,
                int: signal(SignalKind::interrupt())?,
            })
        }
        #[cfg(not(unix))]
        Ok(Self {})
    }

    pub async fn wait(mut self) {
        #[cfg(unix)]
        tokio::select! {
            _ = self.term.recv() => {}
            _ = self.int.recv() => {}
        }
        #[cfg(not(unix))]
        let _ = tokio::signal::ctrl_c().await;
        tracing::info!("shutdown requested");
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("relayctl: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

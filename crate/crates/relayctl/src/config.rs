// SPDX-License-Identifier: Apache-2.0

//! Settings shared across subcommands. Each value comes from the first of:
//! command-line flag, environment variable, config file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub const ENV_CONFIG: &str = "RELAY_CONFIG";
pub const ENV_SERVER_URL: &str = "RELAY_SERVER_URL";
pub const ENV_CREDENTIAL: &str = "RELAY_CREDENTIAL_FILE";
pub const ENV_LOG_LEVEL: &str = "RELAY_LOG";
pub const ENV_DATA_ROOT: &str = "RELAY_DATA_ROOT";

pub const DEFAULT_LOG_LEVEL: &str = "info";

/// Config file contents (TOML). Every key is optional.
#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub server_url: Option<String>,
    pub credential_path: Option<PathBuf>,
    pub log_level: Option<String>,
    pub data_root: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Flag,
    Env,
    File,
    Default,
    Unset,
}

#[derive(Debug, Clone, Serialize)]
pub struct Setting<T> {
    pub value: Option<T>,
    pub source: Source,
}

impl<T> Setting<T> {
    pub fn get(&self) -> Option<&T> {
        self.value.as_ref()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct GlobalConfig {
    pub config_file: Option<PathBuf>,
    pub server_url: Setting<String>,
    pub credential_path: Setting<PathBuf>,
    pub log_level: Setting<String>,
    pub data_root: Setting<PathBuf>,
}

/// Flag values as given on the command line.
#[derive(Debug, Default, Clone)]
pub struct Overrides {
    pub config: Option<PathBuf>,
    pub server_url: Option<String>,
    pub credential_path: Option<PathBuf>,
    pub log_level: Option<String>,
    pub data_root: Option<PathBuf>,
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config file {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("invalid config file {path}: {source}")]
    Parse { path: PathBuf, source: toml::de::Error },
}

pub fn load_file(path: &Path) -> Result<FileConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
        path: path.to_owned(),
        source,
    })?;
    toml::from_str(&text).map_err(|source| ConfigError::Parse {
        path: path.to_owned(),
        source,
    })
}

fn layer<T>(flag: Option<T>, env: Option<T>, file: Option<T>) -> Setting<T> {
    match (flag, env, file) {
        (Some(v), _, _) => Setting { value: Some(v), source: Source::Flag },
        (None, Some(v), _) => Setting { value: Some(v), source: Source::Env },
        (None, None, Some(v)) => Setting { value: Some(v), source: Source::File },
        _ => Setting { value: None, source: Source::Unset },
    }
}

impl GlobalConfig {
    /// `env` looks up environment variables; injected so tests need not
    /// touch the process environment.
    pub fn resolve(flags: Overrides, env: impl Fn(&str) -> Option<String>) -> Result<Self, ConfigError> {
        let env = |k: &str| env(k).filter(|v| !v.is_empty());
        let config_file = flags.config.or_else(|| env(ENV_CONFIG).map(PathBuf::from));
        let file = match &config_file {
            Some(p) => load_file(p)?,
            None => FileConfig::default(),
        };
        let mut log_level = layer(flags.log_level, env(ENV_LOG_LEVEL), file.log_level);
        if log_level.value.is_none() {
            log_level = Setting {
                value: Some(DEFAULT_LOG_LEVEL.into()),
                source: Source::Default,
            };
        }
        Ok(Self {
            config_file,
            server_url: layer(flags.server_url, env(ENV_SERVER_URL), file.server_url),
            credential_path: layer(flags.credential_path, env(ENV_CREDENTIAL).map(PathBuf::from), file.credential_path),
            log_level,
            data_root: layer(flags.data_root, env(ENV_DATA_ROOT).map(PathBuf::from), file.data_root),
        })
    }

    pub fn from_process_env(flags: Overrides) -> Result<Self, ConfigError> {
        Self::resolve(flags, |k| std::env::var(k).ok())
    }
}

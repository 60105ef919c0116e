// SPDX-License-Identifier: Apache-2.0

//! Named network conditions: round-trip latency, bandwidth cap and route.

use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DIRECT_PROFILE: &str = "arim-jupyter-direct";
pub const MEGABYTE: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Route {
    Direct,
    Gateway,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkProfile {
    pub name: String,
    pub base_rtt_ms: f64,
    /// Token-bucket rate in MB/s (10^6 bytes); absent means uncapped.
    #[serde(rename = "bandwidth_cap_MBps", default, skip_serializing_if = "Option::is_none")]
    pub bandwidth_cap_mbps: Option<f64>,
    pub route: Route,
    #[serde(default)]
    pub gateway_penalty_ms: f64,
}

#[derive(Debug, Error)]
pub enum CatalogError {
    #[error("profile {profile:?}: field `{field}` {message}")]
    Invalid {
        profile: String,
        field: &'static str,
        message: String,
    },
    #[error("catalog parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("reading catalog: {0}")]
    Io(#[from] std::io::Error),
    #[error("duplicate profile name {0:?}")]
    Duplicate(String),
    #[error("unknown profile {0:?}")]
    Unknown(String),
}

impl NetworkProfile {
    pub fn direct(name: &str, rtt_ms: f64, cap_mbps: Option<f64>) -> Self {
        Self {
            name: name.to_owned(),
            base_rtt_ms: rtt_ms,
            bandwidth_cap_mbps: cap_mbps,
            route: Route::Direct,
            gateway_penalty_ms: 0.0,
        }
    }

    /// No delay and no cap: measures the shaper's own overhead.
    pub fn passthrough() -> Self {
        Self::direct("passthrough", 0.0, None)
    }

    pub fn effective_rtt_ms(&self) -> f64 {
        match self.route {
            Route::Direct => self.base_rtt_ms,
            Route::Gateway => self.base_rtt_ms + self.gateway_penalty_ms,
        }
    }

    pub fn one_way_delay(&self) -> Duration {
        Duration::from_secs_f64(self.effective_rtt_ms() / 2.0 / 1000.0)
    }

    pub fn cap_bytes_per_sec(&self) -> Option<f64> {
        self.bandwidth_cap_mbps.map(|c| c * MEGABYTE)
    }

    /// Same profile with the bandwidth cap multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            bandwidth_cap_mbps: self.bandwidth_cap_mbps.map(|c| c * factor),
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<(), CatalogError> {
        let invalid = |field, message: &str| CatalogError::Invalid {
            profile: self.name.clone(),
            field,
            message: message.to_owned(),
        };
        if self.name.trim().is_empty() {
            return Err(invalid("name", "must not be empty"));
        }
        if !(self.base_rtt_ms.is_finite() && self.base_rtt_ms >= 0.0) {
            return Err(invalid("base_rtt_ms", "must be a finite value >= 0"));
        }
        if !(self.gateway_penalty_ms.is_finite() && self.gateway_penalty_ms >= 0.0) {
            return Err(invalid("gateway_penalty_ms", "must be a finite value >= 0"));
        }
        if let Some(cap) = self.bandwidth_cap_mbps {
            if !(cap.is_finite() && cap > 0.0) {
                return Err(invalid("bandwidth_cap_MBps", "must be a finite value > 0"));
            }
        }
        Ok(())
    }
}

/// The six measured paths: Jupyter on the direct connection, the campus
/// network through the gateway, two supercomputer centres and two public
/// cloud regions.
pub fn builtin_catalog() -> Vec<NetworkProfile> {
    vec![
        NetworkProfile::direct(DIRECT_PROFILE, 0.87, Some(598.8)),
        NetworkProfile {
            name: "campus-gateway".into(),
            base_rtt_ms: 0.87,
            bandwidth_cap_mbps: Some(51.65),
            route: Route::Gateway,
            gateway_penalty_ms: 3.37,
        },
        NetworkProfile::direct("wisteria-east", 4.13, Some(425.5)),
        NetworkProfile::direct("fugaku-west", 11.9, Some(512.8)),
        NetworkProfile::direct("azure-east", 4.85, Some(128.3)),
        NetworkProfile::direct("azure-west", 12.03, Some(128.0)),
    ]
}

pub fn parse_catalog(json: &str) -> Result<Vec<NetworkProfile>, CatalogError> {
    let profiles: Vec<NetworkProfile> = serde_json::from_str(json)?;
    let mut names = std::collections::HashSet::new();
    for p in &profiles {
        p.validate()?;
        if !names.insert(p.name.as_str()) {
            return Err(CatalogError::Duplicate(p.name.clone()));
        }
    }
    Ok(profiles)
}

/// Load a catalog file, or the builtin catalog when `path` is `None`.
pub fn load_profile_catalog(path: Option<&Path>) -> Result<Vec<NetworkProfile>, CatalogError> {
    match path {
        Some(p) => parse_catalog(&std::fs::read_to_string(p)?),
        None => Ok(builtin_catalog()),
    }
}

pub fn find_profile<'a>(catalog: &'a [NetworkProfile], name: &str) -> Result<&'a NetworkProfile, CatalogError> {
    catalog
        .iter()
        .find(|p| p.name == name)
        .ok_or_else(|| CatalogError::Unknown(name.to_owned()))
}

// SPDX-License-Identifier: Apache-2.0

//! Ratios of every profile against the direct connection, and the
//! expected throughput ranking.

use serde::Serialize;
use thiserror::Error;

use crate::bench::BenchReport;
use crate::profile::DIRECT_PROFILE;

/// Expected throughput ranking, fastest first.
pub const THROUGHPUT_ORDER: [&str; 6] = [
    DIRECT_PROFILE,
    "fugaku-west",
    "wisteria-east",
    "azure-east",
    "azure-west",
    "campus-gateway",
];

/// The two cloud regions differ by 0.2% in cap; below this relative gap
/// they count as tied.
pub const NEAR_TIE: f64 = 0.05;

#[derive(Debug, Error, PartialEq)]
pub enum CompareError {
    #[error("no report for the direct profile {DIRECT_PROFILE:?}")]
    MissingDirect,
}

#[derive(Debug, Clone, Serialize)]
pub struct RouteRatio {
    pub profile: String,
    /// Profile latency over direct latency (relay cost removed).
    pub latency_ratio: f64,
    /// Direct throughput over profile throughput.
    pub throughput_ratio: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RatioTable {
    pub rows: Vec<RouteRatio>,
    pub direct_fastest_latency: bool,
    pub direct_fastest_throughput: bool,
}

impl RatioTable {
    pub fn get(&self, profile: &str) -> Option<&RouteRatio> {
        self.rows.iter().find(|r| r.profile == profile)
    }
}

pub fn compare_routes(reports: &[BenchReport]) -> Result<RatioTable, CompareError> {
    let direct = reports
        .iter()
        .find(|r| r.profile == DIRECT_PROFILE)
        .ok_or(CompareError::MissingDirect)?;
    let (d_lat, d_tp) = (direct.net_latency_ms(), direct.median_throughput_mbps);
    let rows: Vec<RouteRatio> = reports
        .iter()
        .map(|r| {
            let same = r.profile == DIRECT_PROFILE;
            RouteRatio {
                profile: r.profile.clone(),
                latency_ratio: if same { 1.0 } else { r.net_latency_ms() / d_lat },
                throughput_ratio: if same { 1.0 } else { d_tp / r.median_throughput_mbps },
            }
        })
        .collect();
    Ok(RatioTable {
        direct_fastest_latency: rows.iter().all(|r| r.latency_ratio >= 1.0),
        direct_fastest_throughput: rows.iter().all(|r| r.throughput_ratio >= 1.0),
        rows,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OrderingViolation {
    pub faster: String,
    pub slower: String,
    pub faster_mbps: f64,
    pub slower_mbps: f64,
}

/// Adjacent pairs of `THROUGHPUT_ORDER` whose measured ranking is
/// reversed. Profiles without a report are skipped.
pub fn check_ordering(reports: &[BenchReport]) -> Vec<OrderingViolation> {
    let ranked: Vec<&BenchReport> = THROUGHPUT_ORDER
        .iter()
        .filter_map(|name| reports.iter().find(|r| r.profile == *name))
        .collect();
    ranked
        .windows(2)
        .filter_map(|w| {
            let (a, b) = (w[0], w[1]);
            let tie_allowed = a.profile == "azure-east" && b.profile == "azure-west";
            let ok = if tie_allowed {
                a.median_throughput_mbps >= b.median_throughput_mbps * (1.0 - NEAR_TIE)
            } else {
                a.median_throughput_mbps > b.median_throughput_mbps
            };
            (!ok).then(|| OrderingViolation {
                faster: a.profile.clone(),
                slower: b.profile.clone(),
                faster_mbps: a.median_throughput_mbps,
                slower_mbps: b.median_throughput_mbps,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report(name: &str, lat: f64, tp: f64) -> BenchReport {
        BenchReport {
            profile: name.into(),
            effective_rtt_ms: lat,
            bandwidth_cap_mbps: None,
            loopback_baseline_ms: 0.1,
            median_latency_ms: lat + 0.1,
            median_throughput_mbps: tp,
            run_samples: vec![],
            relative_spread: 0.0,
            latency_relative_spread: 0.0,
            spread_warning: false,
        }
    }

    #[test]
    fn direct_against_itself_is_exactly_one() {
        let t = compare_routes(&[report(DIRECT_PROFILE, 0.87, 100.0)]).unwrap();
        assert_eq!(t.get(DIRECT_PROFILE).unwrap().latency_ratio, 1.0);
        assert_eq!(t.get(DIRECT_PROFILE).unwrap().throughput_ratio, 1.0);
    }

    #[test]
    fn missing_direct_is_an_error() {
        let err = compare_routes(&[report("campus-gateway", 4.24, 10.0)]).unwrap_err();
        assert_eq!(err, CompareError::MissingDirect);
    }

    #[test]
    fn ratios_use_relay_free_latency() {
        let t = compare_routes(&[report(DIRECT_PROFILE, 0.87, 598.8), report("campus-gateway", 4.24, 51.65)]).unwrap();
        let row = t.get("campus-gateway").unwrap();
        assert!((row.latency_ratio - 4.24 / 0.87).abs() < 1e-9);
        assert!((row.throughput_ratio - 598.8 / 51.65).abs() < 1e-9);
        assert!(t.direct_fastest_latency && t.direct_fastest_throughput);
    }

    #[test]
    fn ordering_tolerates_only_the_cloud_near_tie() {
        let mut rs: Vec<BenchReport> = THROUGHPUT_ORDER
            .iter()
            .zip([150.0, 128.0, 106.0, 32.0, 32.5, 12.9])
            .map(|(n, tp)| report(n, 1.0, tp))
            .collect();
        assert!(check_ordering(&rs).is_empty());
        rs[1].median_throughput_mbps = 151.0;
        let v = check_ordering(&rs);
        assert_eq!(v.len(), 1);
        assert_eq!((v[0].faster.as_str(), v[0].slower.as_str()), (DIRECT_PROFILE, "fugaku-west"));
    }
}

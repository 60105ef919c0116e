// SPDX-License-Identifier: Apache-2.0

//! Network-conditions emulation and benchmarking for the relay.
//!
//! A [`Shaper`] relays TCP on loopback while adding a profile's one-way
//! delay and bandwidth cap; the bench drives the real agent upload path
//! against an in-process storage service through it.

pub mod bench;
pub mod compare;
pub mod latency;
pub mod profile;
pub mod shaper;

pub use bench::{
    reports_csv, run_suite, run_throughput_bench, BenchError, BenchFixture, BenchReport, BenchSpec, RunSample,
};
pub use compare::{check_ordering, compare_routes, CompareError, OrderingViolation, RatioTable, RouteRatio, THROUGHPUT_ORDER};
pub use latency::{
    loopback_baseline, measure_latency, median, profile_latency, relative_spread, EchoServer, LatencyError, LatencySample,
};
pub use profile::{
    builtin_catalog, find_profile, load_profile_catalog, parse_catalog, CatalogError, NetworkProfile, Route, DIRECT_PROFILE,
};
pub use shaper::{start_shaper, Shaper, ShaperStats, TokenBucket};

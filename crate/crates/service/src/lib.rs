// SPDX-License-Identifier: Apache-2.0

//! Storage service: device authentication, chunked uploads into per-user
//! namespaces, integrity verification on commit, quotas and usage reports.

pub mod auth;
pub mod error;
pub mod http;
pub mod ledger;
pub mod quota;
pub mod stats;
pub mod store;

pub use auth::{Principal, RateLimit, DEFAULT_TOKEN_TTL};
pub use error::ServiceError;
pub use http::{router, serve, spawn_server, ServerHandle};
pub use ledger::{read_ledger, UsageEvent};
pub use quota::{QuotaPolicy, UserUsage, DEFAULT_PER_USER_LIMIT};
pub use stats::{aggregate_stats, cumulative_by_month, CategoryBreakdown, MonthlyPoint, OrgMap, StatsPeriod, UsageReport};
pub use store::{ServiceConfig, StorageService, StoredObject};

// SPDX-License-Identifier: Apache-2.0

use std::collections::HashMap;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::error::{Result, ServiceError};

/// 1 TiB.
pub const DEFAULT_PER_USER_LIMIT: u64 = 1 << 40;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuotaPolicy {
    pub per_user_limit: u64,
    pub hard: bool,
}

impl Default for QuotaPolicy {
    fn default() -> Self {
        Self {
            per_user_limit: DEFAULT_PER_USER_LIMIT,
            hard: true,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct UserUsage {
    pub reserved: u64,
    pub committed: u64,
}

impl UserUsage {
    pub fn total(&self) -> u64 {
        self.reserved + self.committed
    }
}

/// Per-user reservation counters. All updates go through one lock so that
/// concurrent reservations cannot jointly overshoot the limit.
#[derive(Debug, Default)]
pub struct QuotaBook {
    policy: QuotaPolicy,
    users: Mutex<HashMap<String, UserUsage>>,
}

impl QuotaBook {
    pub fn new(policy: QuotaPolicy) -> Self {
        Self {
            policy,
            users: Mutex::new(HashMap::new()),
        }
    }

    pub fn policy(&self) -> QuotaPolicy {
        self.policy
    }

    pub fn usage(&self, user: &str) -> UserUsage {
        self.users
            .lock()
            .unwrap()
            .get(user)
            .copied()
            .unwrap_or_default()
    }

    pub fn reserve(&self, user: &str, bytes: u64) -> Result<()> {
        let mut users = self.users.lock().unwrap();
        let usage = users.entry(user.to_owned()).or_default();
        let available = self.policy.per_user_limit.saturating_sub(usage.total());
        if bytes > available {
            if self.policy.hard {
                return Err(ServiceError::QuotaExceeded {
                    user: user.to_owned(),
                    requested: bytes,
                    available,
                });
            }
            tracing::warn!(user, bytes, available, "soft quota exceeded");
        }
        usage.reserved += bytes;
        Ok(())
    }

    pub fn release(&self, user: &str, bytes: u64) {
        let mut users = self.users.lock().unwrap();
        let usage = users.entry(user.to_owned()).or_default();
        usage.reserved = usage.reserved.saturating_sub(bytes);
    }

    /// Convert a reservation into committed usage.
    pub fn commit(&self, user: &str, bytes: u64) {
        let mut users = self.users.lock().unwrap();
        let usage = users.entry(user.to_owned()).or_default();
        usage.reserved = usage.reserved.saturating_sub(bytes);
        usage.committed += bytes;
    }

    /// Committed usage recovered from the ledger at startup.
    pub(crate) fn restore_committed(&self, user: &str, bytes: u64) {
        let mut users = self.users.lock().unwrap();
        users.entry(user.to_owned()).or_default().committed += bytes;
    }

    /// Reservation for a spooled session recovered at startup. Never refused.
    pub(crate) fn restore_reserved(&self, user: &str, bytes: u64) {
        let mut users = self.users.lock().unwrap();
        users.entry(user.to_owned()).or_default().reserved += bytes;
    }
}

// SPDX-License-Identifier: Apache-2.0

use std::fmt;

use serde::{Deserialize, Serialize};

/// A device's identity and the users it may route uploads for. Same JSON
/// shape for the agent's credential file and the service's device registry.
#[derive(Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeviceCredential {
    pub device_id: String,
    pub device_secret: String,
    #[serde(default)]
    pub registered_users: Vec<String>,
}

impl DeviceCredential {
    pub fn may_route_for(&self, user: &str) -> bool {
        self.registered_users.iter().any(|u| u == user)
    }

    /// Constant-time secret comparison.
    pub fn secret_matches(&self, presented: &str) -> bool {
        let a = self.device_secret.as_bytes();
        let b = presented.as_bytes();
        let mut diff = a.len() ^ b.len();
        for (i, x) in a.iter().enumerate() {
            diff |= usize::from(x ^ b.get(i).copied().unwrap_or(0));
        }
        diff == 0
    }
}

// the secret must never reach logs
impl fmt::Debug for DeviceCredential {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DeviceCredential")
            .field("device_id", &self.device_id)
            .field("device_secret", &"<redacted>")
            .field("registered_users", &self.registered_users)
            .finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn debug_redacts_secret() {
        let c = DeviceCredential {
            device_id: "dev-1".into(),
            device_secret: "hunter2-very-secret".into(),
            registered_users: vec!["alice".into()],
        };
        let shown = format!("{c:?}");
        assert!(!shown.contains("hunter2"));
        assert!(c.secret_matches("hunter2-very-secret"));
        assert!(!c.secret_matches("hunter2-very-secreT"));
        assert!(!c.secret_matches("hunter2"));
        assert!(c.may_route_for("alice"));
        assert!(!c.may_route_for("bob"));
    }
}

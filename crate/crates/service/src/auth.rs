// SPDX-License-Identifier: Apache-2.0

//! Device authentication and bearer tokens.

use std::collections::{HashMap, VecDeque};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use chrono::{DateTime, Utc};
use relay_core::wire::TokenResponse;
use relay_core::DeviceCredential;

use crate::error::{Result, ServiceError};

pub const DEFAULT_TOKEN_TTL: Duration = Duration::from_secs(3600);

#[derive(Debug, Clone, Copy)]
pub struct RateLimit {
    pub max_failures: usize,
    pub window: Duration,
}

impl Default for RateLimit {
    fn default() -> Self {
        Self {
            max_failures: 5,
            window: Duration::from_secs(60),
        }
    }
}

/// What a valid bearer token authorizes.
#[derive(Debug, Clone)]
pub struct Principal {
    pub device_id: String,
    pub registered_users: Vec<String>,
}

impl Principal {
    pub fn may_access(&self, user: &str) -> bool {
        self.registered_users.iter().any(|u| u == user)
    }
}

#[derive(Debug)]
struct IssuedToken {
    principal: Principal,
    expires_at: DateTime<Utc>,
}

pub struct Authenticator {
    devices: HashMap<String, DeviceCredential>,
    ttl: Duration,
    rate_limit: RateLimit,
    tokens: Mutex<HashMap<String, IssuedToken>>,
    failures: Mutex<HashMap<String, VecDeque<Instant>>>,
}

impl Authenticator {
    pub fn new(devices: Vec<DeviceCredential>, ttl: Duration, rate_limit: RateLimit) -> Self {
        Self {
            devices: devices
                .into_iter()
                .map(|d| (d.device_id.clone(), d))
                .collect(),
            ttl,
            rate_limit,
            tokens: Mutex::new(HashMap::new()),
            failures: Mutex::new(HashMap::new()),
        }
    }

    pub fn issue_token(&self, device_id: &str, device_secret: &str) -> Result<TokenResponse> {
        let now = Instant::now();
        {
            let mut failures = self.failures.lock().unwrap();
            let recent = failures.entry(device_id.to_owned()).or_default();
            while recent
                .front()
                .is_some_and(|t| now.duration_since(*t) >= self.rate_limit.window)
            {
                recent.pop_front();
            }
            if recent.len() >= self.rate_limit.max_failures {
                return Err(ServiceError::RateLimited);
            }
        }

        let device = match self.devices.get(device_id) {
            Some(d) if d.secret_matches(device_secret) => d,
            _ => {
                self.failures
                    .lock()
                    .unwrap()
                    .entry(device_id.to_owned())
                    .or_default()
                    .push_back(now);
                tracing::warn!(device_id, "authentication rejected");
                return Err(ServiceError::AuthRejected);
            }
        };

        let token = format!("{:032x}{:032x}", rand::random::<u128>(), rand::random::<u128>());
        let expires_at = Utc::now()
            + chrono::Duration::from_std(self.ttl).unwrap_or(chrono::Duration::MAX);
        let principal = Principal {
            device_id: device.device_id.clone(),
            registered_users: device.registered_users.clone(),
        };
        let mut tokens = self.tokens.lock().unwrap();
        let now_wall = Utc::now();
        tokens.retain(|_, t| t.expires_at > now_wall);
        tokens.insert(
            token.clone(),
            IssuedToken {
                principal,
                expires_at,
            },
        );
        Ok(TokenResponse { token, expires_at })
    }

    pub fn authorize(&self, bearer: Option<&str>) -> Result<Principal> {
        let bearer = bearer.ok_or(ServiceError::Unauthorized)?;
        let tokens = self.tokens.lock().unwrap();
        let issued = tokens.get(bearer).ok_or(ServiceError::Unauthorized)?;
        if Utc::now() >= issued.expires_at {
            return Err(ServiceError::TokenExpired);
        }
        Ok(issued.principal.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn auth(ttl: Duration) -> Authenticator {
        Authenticator::new(
            vec![DeviceCredential {
                device_id: "dev".into(),
                device_secret: "s3cret".into(),
                registered_users: vec!["alice".into()],
            }],
            ttl,
            RateLimit::default(),
        )
    }

    #[test]
    fn valid_credential_gets_token_with_ttl() {
        let a = auth(DEFAULT_TOKEN_TTL);
        let t = a.issue_token("dev", "s3cret").unwrap();
        let remaining = (t.expires_at - Utc::now()).num_seconds();
        assert!((3590..=3600).contains(&remaining), "{remaining}");
        let p = a.authorize(Some(&t.token)).unwrap();
        assert_eq!(p.device_id, "dev");
        assert!(p.may_access("alice"));
        assert!(!p.may_access("bob"));
    }

    #[test]
    fn wrong_secret_and_unknown_device_look_identical() {
        let a = auth(DEFAULT_TOKEN_TTL);
        let wrong = a.issue_token("dev", "nope").unwrap_err();
        let unknown = a.issue_token("ghost", "nope").unwrap_err();
        assert_eq!(wrong.body(), unknown.body());
    }

    #[test]
    fn sixth_failure_in_window_is_rate_limited() {
        let a = auth(DEFAULT_TOKEN_TTL);
        for _ in 0..5 {
            assert!(matches!(
                a.issue_token("dev", "bad"),
                Err(ServiceError::AuthRejected)
            ));
        }
        assert!(matches!(
            a.issue_token("dev", "bad"),
            Err(ServiceError::RateLimited)
        ));
        assert!(matches!(
            a.issue_token("dev", "s3cret"),
            Err(ServiceError::RateLimited)
        ));
    }

    #[test]
    fn expired_token_is_distinguished() {
        let a = auth(Duration::from_millis(1));
        let t = a.issue_token("dev", "s3cret").unwrap();
        std::thread::sleep(Duration::from_millis(5));
        assert!(matches!(
            a.authorize(Some(&t.token)),
            Err(ServiceError::TokenExpired)
        ));
        assert!(matches!(
            a.authorize(Some("garbage")),
            Err(ServiceError::Unauthorized)
        ));
        assert!(matches!(a.authorize(None), Err(ServiceError::Unauthorized)));
    }
}

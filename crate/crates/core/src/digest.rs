// SPDX-License-Identifier: Apache-2.0

//! Content digests.
//!
//! Every digest in the system is SHA-256 rendered as 64 lowercase hex
//! characters. The algorithm tag is carried on the value so that a second
//! algorithm can be introduced without changing call sites, but the wire
//! form is the bare hex string.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest as _, Sha256};

use crate::error::DigestParseError;

/// Hex length of a SHA-256 digest.
pub const SHA256_HEX_LEN: usize = 64;

/// SHA-256 of the empty input.
pub const EMPTY_SHA256_HEX: &str =
    "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DigestAlgorithm {
    #[default]
    Sha256,
}

#[derive(Clone, PartialEq, Eq, Hash)]
pub struct ContentDigest {
    algorithm: DigestAlgorithm,
    value: String,
}

impl ContentDigest {
    /// Digest a complete byte slice.
    pub fn of(bytes: &[u8]) -> Self {
        let mut hasher = DigestHasher::new();
        hasher.update(bytes);
        hasher.finish()
    }

    pub fn empty() -> Self {
        Self {
            algorithm: DigestAlgorithm::Sha256,
            value: EMPTY_SHA256_HEX.to_owned(),
        }
    }

    /// Parse a lowercase hex SHA-256 digest.
    pub fn from_hex(hex: &str) -> Result<Self, DigestParseError> {
        if hex.len() != SHA256_HEX_LEN {
            return Err(DigestParseError::Length(hex.len()));
        }
        if let Some(c) = hex.chars().find(|c| !matches!(c, '0'..='9' | 'a'..='f')) {
            return Err(DigestParseError::Character(c));
        }
        Ok(Self {
            algorithm: DigestAlgorithm::Sha256,
            value: hex.to_owned(),
        })
    }

    pub fn algorithm(&self) -> DigestAlgorithm {
        self.algorithm
    }

    pub fn as_hex(&self) -> &str {
        &self.value
    }
}

impl fmt::Display for ContentDigest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.value)
    }
}

impl fmt::Debug for ContentDigest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "sha256:{}", self.value)
    }
}

impl FromStr for ContentDigest {
    type Err = DigestParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::from_hex(s)
    }
}

impl Serialize for ContentDigest {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.value)
    }
}

impl<'de> Deserialize<'de> for ContentDigest {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        Self::from_hex(&s).map_err(serde::de::Error::custom)
    }
}

/// Incremental hasher producing a [`ContentDigest`].
#[derive(Clone, Default)]
pub struct DigestHasher {
    inner: Sha256,
}

impl DigestHasher {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn update(&mut self, bytes: &[u8]) {
        self.inner.update(bytes);
    }

    pub fn finish(self) -> ContentDigest {
        ContentDigest {
            algorithm: DigestAlgorithm::Sha256,
            value: hex::encode(self.inner.finalize()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_input_matches_known_constant() {
        assert_eq!(ContentDigest::of(b"").as_hex(), EMPTY_SHA256_HEX);
        assert_eq!(ContentDigest::of(b""), ContentDigest::empty());
    }

    #[test]
    fn known_vector() {
        assert_eq!(
            ContentDigest::of(b"abc").as_hex(),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn incremental_equals_one_shot() {
        let data: Vec<u8> = (0..10_000u32).map(|i| (i % 251) as u8).collect();
        let mut h = DigestHasher::new();
        for part in data.chunks(333) {
            h.update(part);
        }
        assert_eq!(h.finish(), ContentDigest::of(&data));
    }

    #[test]
    fn rejects_bad_hex() {
        assert!(matches!(
            ContentDigest::from_hex("abc"),
            Err(DigestParseError::Length(3))
        ));
        let upper = EMPTY_SHA256_HEX.to_uppercase();
        assert!(matches!(
            ContentDigest::from_hex(&upper),
            Err(DigestParseError::Character(_))
        ));
        let json = format!("\"{}\"", "g".repeat(64));
        assert!(serde_json::from_str::<ContentDigest>(&json).is_err());
    }

    #[test]
    fn serializes_as_bare_hex() {
        let d = ContentDigest::empty();
        let json = serde_json::to_string(&d).unwrap();
        assert_eq!(json, format!("\"{EMPTY_SHA256_HEX}\""));
        let back: ContentDigest = serde_json::from_str(&json).unwrap();
        assert_eq!(back, d);
    }
}

// SPDX-License-Identifier: Apache-2.0

//! File manifests: the unit of transfer.
//!
//! A manifest splits a file into fixed-size chunks (the last one may be
//! short) and records a digest per chunk plus one for the whole file. The
//! serde form of [`FileManifest`] is the canonical JSON used on the wire
//! and in the agent journal: field order follows the struct, chunks are in
//! ascending index order and digests are lowercase hex.

use std::fs::File;
use std::io::{self, Read};
use std::path::{Component, Path};

use serde::{Deserialize, Serialize};

use crate::digest::{ContentDigest, DigestHasher};
use crate::error::{BuildManifestError, ManifestError};

/// 8 MiB.
pub const DEFAULT_CHUNK_SIZE: u64 = 8 * 1024 * 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Category {
    Experimental,
    Theoretical,
    #[default]
    #[serde(other)]
    Uncategorized,
}

impl Category {
    pub const ALL: [Category; 3] = [
        Category::Experimental,
        Category::Theoretical,
        Category::Uncategorized,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Category::Experimental => "experimental",
            Category::Theoretical => "theoretical",
            Category::Uncategorized => "uncategorized",
        }
    }

    /// Lenient parse; anything unrecognised is uncategorized.
    pub fn parse_lenient(s: &str) -> Self {
        match s.to_ascii_lowercase().as_str() {
            "experimental" => Category::Experimental,
            "theoretical" => Category::Theoretical,
            _ => Category::Uncategorized,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChunkRecord {
    pub index: u64,
    pub offset: u64,
    pub length: u64,
    pub digest: ContentDigest,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileManifest {
    pub file_id: String,
    pub owner: String,
    pub relative_path: String,
    pub category: Category,
    pub total_size: u64,
    pub chunk_size: u64,
    pub chunks: Vec<ChunkRecord>,
    pub whole_digest: ContentDigest,
}

/// Number of chunks a file of `total_size` splits into.
pub fn expected_chunk_count(total_size: u64, chunk_size: u64) -> u64 {
    total_size.div_ceil(chunk_size)
}

/// Random 128-bit identifier as 32 lowercase hex characters.
pub fn new_file_id() -> String {
    format!("{:032x}", rand::random::<u128>())
}

impl FileManifest {
    pub fn chunk_count(&self) -> u64 {
        self.chunks.len() as u64
    }

    pub fn chunk(&self, index: u64) -> Option<&ChunkRecord> {
        usize::try_from(index).ok().and_then(|i| self.chunks.get(i))
    }

    /// Check every structural invariant. The whole-file digest can only be
    /// checked against the bytes, so it is not covered here.
    pub fn validate(&self) -> Result<(), ManifestError> {
        if self.chunk_size == 0 {
            return Err(ManifestError::ZeroChunkSize);
        }
        validate_file_id(&self.file_id)?;
        validate_owner(&self.owner)?;
        validate_relative_path(&self.relative_path)?;

        let expected = expected_chunk_count(self.total_size, self.chunk_size);
        let actual = self.chunk_count();
        let mut sum: u64 = 0;
        for (position, chunk) in self.chunks.iter().enumerate() {
            let position = position as u64;
            if chunk.index != position {
                return Err(ManifestError::ChunkIndex {
                    position,
                    index: chunk.index,
                });
            }
            let expected_offset = position.saturating_mul(self.chunk_size);
            if chunk.offset != expected_offset {
                return Err(ManifestError::ChunkOffset {
                    index: position,
                    offset: chunk.offset,
                    expected: expected_offset,
                });
            }
            let is_last = position + 1 == actual;
            let bad = if is_last {
                chunk.length == 0 || chunk.length > self.chunk_size
            } else {
                chunk.length != self.chunk_size
            };
            if bad {
                return Err(ManifestError::ChunkLength {
                    index: position,
                    length: chunk.length,
                    expected: self.chunk_size,
                });
            }
            sum = sum.saturating_add(chunk.length);
        }
        if sum != self.total_size {
            return Err(ManifestError::ChunkLengthSum {
                sum,
                total_size: self.total_size,
            });
        }
        if actual != expected {
            return Err(ManifestError::ChunkCount { expected, actual });
        }
        Ok(())
    }

    pub fn to_canonical_json(&self) -> String {
        serde_json::to_string(self).expect("manifest serialization is infallible")
    }
}

pub fn validate_owner(owner: &str) -> Result<(), ManifestError> {
    let ok = !owner.is_empty()
        && !owner.starts_with('.')
        && !owner.contains(['/', '\\', '\0']);
    if ok {
        Ok(())
    } else {
        Err(ManifestError::InvalidOwner(owner.to_owned()))
    }
}

pub fn validate_relative_path(path: &str) -> Result<(), ManifestError> {
    let bad = || ManifestError::InvalidRelativePath(path.to_owned());
    if path.is_empty() || path.starts_with('/') || path.contains(['\\', '\0']) {
        return Err(bad());
    }
    for part in path.split('/') {
        if part.is_empty() || part == "." || part == ".." {
            return Err(bad());
        }
    }
    Ok(())
}

fn validate_file_id(id: &str) -> Result<(), ManifestError> {
    if id.len() == 32 && id.chars().all(|c| matches!(c, '0'..='9' | 'a'..='f')) {
        Ok(())
    } else {
        Err(ManifestError::InvalidFileId(id.to_owned()))
    }
}

/// Build a manifest from a file on disk.
pub fn build_manifest(
    path: &Path,
    owner: &str,
    relative_path: &str,
    category: Category,
    chunk_size: u64,
) -> Result<FileManifest, BuildManifestError> {
    if chunk_size == 0 {
        return Err(ManifestError::ZeroChunkSize.into());
    }
    let file = File::open(path)?;
    build_manifest_from_reader(file, owner, relative_path, category, chunk_size)
}

/// Build a manifest from any byte source, reading it exactly once.
pub fn build_manifest_from_reader<R: Read>(
    mut reader: R,
    owner: &str,
    relative_path: &str,
    category: Category,
    chunk_size: u64,
) -> Result<FileManifest, BuildManifestError> {
    if chunk_size == 0 {
        return Err(ManifestError::ZeroChunkSize.into());
    }
    validate_owner(owner)?;
    validate_relative_path(relative_path)?;

    let buf_len = usize::try_from(chunk_size).unwrap_or(usize::MAX).min(64 * 1024 * 1024);
    let mut buf = vec![0u8; buf_len];
    let mut whole = DigestHasher::new();
    let mut chunks = Vec::new();
    let mut offset: u64 = 0;

    loop {
        let mut chunk_hasher = DigestHasher::new();
        let mut length: u64 = 0;
        while length < chunk_size {
            let want = (chunk_size - length).min(buf.len() as u64) as usize;
            let n = read_full(&mut reader, &mut buf[..want])?;
            if n == 0 {
                break;
            }
            chunk_hasher.update(&buf[..n]);
            whole.update(&buf[..n]);
            length += n as u64;
        }
        if length == 0 {
            break;
        }
        chunks.push(ChunkRecord {
            index: chunks.len() as u64,
            offset,
            length,
            digest: chunk_hasher.finish(),
        });
        offset += length;
        if length < chunk_size {
            break;
        }
    }

    let manifest = FileManifest {
        file_id: new_file_id(),
        owner: owner.to_owned(),
        relative_path: relative_path.to_owned(),
        category,
        total_size: offset,
        chunk_size,
        chunks,
        whole_digest: whole.finish(),
    };
    debug_assert_eq!(manifest.validate(), Ok(()));
    Ok(manifest)
}

fn read_full<R: Read>(reader: &mut R, buf: &mut [u8]) -> io::Result<usize> {
    let mut filled = 0;
    while filled < buf.len() {
        match reader.read(&mut buf[filled..]) {
            Ok(0) => break,
            Ok(n) => filled += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    Ok(filled)
}

/// True iff `payload` has the recorded length and digest.
pub fn verify_chunk(payload: &[u8], record: &ChunkRecord) -> bool {
    payload.len() as u64 == record.length && ContentDigest::of(payload) == record.digest
}

/// Convert a path relative to some root into the `/`-separated form used in
/// manifests. Returns `None` for anything that is not a plain relative path.
pub fn relative_path_string(path: &Path) -> Option<String> {
    let mut parts = Vec::new();
    for component in path.components() {
        match component {
            Component::Normal(part) => parts.push(part.to_str()?.to_owned()),
            _ => return None,
        }
    }
    if parts.is_empty() {
        None
    } else {
        Some(parts.join("/"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::digest::EMPTY_SHA256_HEX;

    const MIB: u64 = 1024 * 1024;

    fn manifest_of(bytes: &[u8], chunk_size: u64) -> FileManifest {
        build_manifest_from_reader(bytes, "alice", "a/b.dat", Category::Experimental, chunk_size)
            .unwrap()
    }

    #[test]
    fn empty_file_has_no_chunks() {
        let m = manifest_of(&[], DEFAULT_CHUNK_SIZE);
        assert_eq!(m.total_size, 0);
        assert!(m.chunks.is_empty());
        assert_eq!(m.whole_digest.as_hex(), EMPTY_SHA256_HEX);
        m.validate().unwrap();
    }

    #[test]
    fn ten_mib_in_four_mib_chunks() {
        let data = vec![7u8; (10 * MIB) as usize];
        let m = manifest_of(&data, 4 * MIB);
        let lengths: Vec<u64> = m.chunks.iter().map(|c| c.length).collect();
        let offsets: Vec<u64> = m.chunks.iter().map(|c| c.offset).collect();
        assert_eq!(lengths, vec![4 * MIB, 4 * MIB, 2 * MIB]);
        assert_eq!(offsets, vec![0, 4 * MIB, 8 * MIB]);
    }

    #[test]
    fn exact_multiple_has_no_short_tail() {
        let m = manifest_of(&[1u8; 8192], 4096);
        assert_eq!(m.chunk_count(), 2);
        assert!(m.chunks.iter().all(|c| c.length == 4096));
    }

    #[test]
    fn zero_chunk_size_is_rejected() {
        let err = build_manifest_from_reader(&[][..], "u", "p", Category::Uncategorized, 0);
        assert!(matches!(
            err,
            Err(BuildManifestError::Manifest(ManifestError::ZeroChunkSize))
        ));
    }

    #[test]
    fn unreadable_file_is_io_error() {
        let err = build_manifest(
            Path::new("/nonexistent/really/not/here"),
            "u",
            "p",
            Category::Uncategorized,
            16,
        );
        assert!(matches!(err, Err(BuildManifestError::Io(_))));
    }

    #[test]
    fn verify_chunk_cases() {
        let data: Vec<u8> = (0..5000u32).map(|i| (i * 31 % 256) as u8).collect();
        let m = manifest_of(&data, 4096);
        let first = &m.chunks[0];
        assert!(verify_chunk(&data[..4096], first));

        let mut flipped = data[..4096].to_vec();
        flipped[100] ^= 0x01;
        assert!(!verify_chunk(&flipped, first));

        let mut wrong_len = first.clone();
        wrong_len.length += 1;
        assert!(!verify_chunk(&data[..4096], &wrong_len));
    }

    #[test]
    fn validate_names_violated_invariant() {
        let data = vec![3u8; 10_000];
        let mut m = manifest_of(&data, 4096);
        m.total_size += 1;
        let err = m.validate().unwrap_err();
        assert_eq!(err.invariant(), "chunk_length_sum");

        let mut m = manifest_of(&data, 4096);
        m.chunks.swap(0, 1);
        assert_eq!(m.validate().unwrap_err().invariant(), "chunk_index");

        let mut m = manifest_of(&data, 4096);
        m.relative_path = "../escape".into();
        assert_eq!(m.validate().unwrap_err().invariant(), "relative_path");
    }

    #[test]
    fn relative_path_rules() {
        assert!(validate_relative_path("a/b/c.txt").is_ok());
        for bad in ["", "/abs", "a//b", "a/../b", "./a", "a/"] {
            assert!(validate_relative_path(bad).is_err(), "{bad}");
        }
        assert_eq!(
            relative_path_string(Path::new("x/y.bin")).as_deref(),
            Some("x/y.bin")
        );
        assert_eq!(relative_path_string(Path::new("../y")), None);
    }

    #[test]
    fn canonical_json_field_order() {
        let m = manifest_of(b"hello", 4);
        let json = m.to_canonical_json();
        let keys = [
            "\"file_id\"",
            "\"owner\"",
            "\"relative_path\"",
            "\"category\"",
            "\"total_size\"",
            "\"chunk_size\"",
            "\"chunks\"",
            "\"whole_digest\"",
        ];
        let positions: Vec<usize> = keys.iter().map(|k| json.find(k).unwrap()).collect();
        assert!(positions.windows(2).all(|w| w[0] < w[1]), "{json}");
        assert!(json.contains("\"category\":\"experimental\""));
        let back: FileManifest = serde_json::from_str(&json).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn unknown_category_folds_to_uncategorized() {
        let c: Category = serde_json::from_str("\"simulation\"").unwrap();
        assert_eq!(c, Category::Uncategorized);
        assert_eq!(Category::parse_lenient("Theoretical"), Category::Theoretical);
    }
}

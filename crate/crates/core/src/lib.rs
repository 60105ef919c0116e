// SPDX-License-Identifier: Apache-2.0

//! Shared data model for the relay agent and the storage service.

pub mod credential;
pub mod digest;
pub mod error;
pub mod manifest;
pub mod resume;
pub mod state;
pub mod wire;

pub use credential::DeviceCredential;
pub use digest::{ContentDigest, DigestAlgorithm, DigestHasher};
pub use error::{BuildManifestError, DigestParseError, ManifestError, ResumeError, StateError};
pub use manifest::{
    build_manifest, build_manifest_from_reader, verify_chunk, Category, ChunkRecord, FileManifest,
    DEFAULT_CHUNK_SIZE,
};
pub use resume::plan_resume;
pub use state::{advance_state, TransferEvent, TransferPhase, TransferState};

// SPDX-License-Identifier: Apache-2.0

use std::collections::BTreeSet;

use crate::error::ResumeError;
use crate::manifest::FileManifest;

/// Chunk indices still to send, ascending. Empty iff the transfer is complete.
pub fn plan_resume(manifest: &FileManifest, acked: &BTreeSet<u64>) -> Result<Vec<u64>, ResumeError> {
    pending_indices(manifest.chunk_count(), acked)
}

pub fn pending_indices(chunk_count: u64, acked: &BTreeSet<u64>) -> Result<Vec<u64>, ResumeError> {
    if let Some(&index) = acked.range(chunk_count..).next() {
        return Err(ResumeError::IndexOutOfRange { index, chunk_count });
    }
    Ok((0..chunk_count).filter(|i| !acked.contains(i)).collect())
}

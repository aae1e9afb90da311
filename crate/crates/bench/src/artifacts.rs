//! Run manifests: content hashes of every artifact plus the configuration.

use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::Result;

/// SHA-256 of `blob <len>\0` followed by the content.
pub fn blob_hash(content: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", content.len()).as_bytes());
    h.update(content);
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ArtifactEntry {
    /// Path relative to the run directory.
    pub file: String,
    pub bytes: u64,
    pub sha256: String,
}

/// Hashes the listed files, in order.
pub fn hash_files(root: &Path, files: &[PathBuf]) -> Result<Vec<ArtifactEntry>> {
    files
        .iter()
        .map(|f| {
            let content = std::fs::read(root.join(f))?;
            Ok(ArtifactEntry {
                file: f.to_string_lossy().into_owned(),
                bytes: content.len() as u64,
                sha256: blob_hash(&content),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn framed_hash_matches_reference_digests() {
        assert_eq!(blob_hash(b""), "473a0f4c3be8a93681a267e3b1e9a7dcda1185436fe141f7749120a303721813");
        assert_eq!(blob_hash(b"hello"), "8aec4e4876f854f688d0ebfc8f37598f38e5fd6903cccc850ca36591175aeb60");
    }
}

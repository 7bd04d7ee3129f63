//! Content-addressed artifact files.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::PipelineError;
use crate::artifact::write_atomic;

/// Reference to an immutable artifact under the output root.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactRef {
    pub sha256: String,
    /// Path relative to the output root.
    pub path: String,
    pub bytes: u64,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Stores artifacts as `<root>/artifacts/<sha256>.<ext>`.
#[derive(Debug, Clone)]
pub struct ArtifactStore {
    root: PathBuf,
}

impl ArtifactStore {
    pub fn new(root: &Path) -> Self {
        Self {
            root: root.to_path_buf(),
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn put(&self, bytes: &[u8], ext: &str) -> Result<ArtifactRef, PipelineError> {
        let sha256 = sha256_hex(bytes);
        let rel = format!("artifacts/{sha256}.{ext}");
        let path = self.root.join(&rel);
        let intact = fs::read(&path).is_ok_and(|b| sha256_hex(&b) == sha256);
        if !intact {
            write_atomic(&path, bytes)?;
        }
        Ok(ArtifactRef {
            sha256,
            path: rel,
            bytes: bytes.len() as u64,
        })
    }

    pub fn path(&self, r: &ArtifactRef) -> PathBuf {
        self.root.join(&r.path)
    }

    /// Reads an artifact and checks its hash.
    pub fn read(&self, r: &ArtifactRef) -> Result<Vec<u8>, PipelineError> {
        let bytes = fs::read(self.path(r))?;
        let found = sha256_hex(&bytes);
        if found != r.sha256 {
            return Err(PipelineError::Corrupt {
                path: r.path.clone(),
                expected: r.sha256.clone(),
                found,
            });
        }
        Ok(bytes)
    }

    pub fn verify(&self, r: &ArtifactRef) -> bool {
        self.read(r).is_ok()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn put_read_and_detect_tampering() {
        let dir = tempfile::tempdir().unwrap();
        let store = ArtifactStore::new(dir.path());
        let r = store.put(b"hello", "txt").unwrap();
        assert_eq!(
            r.sha256,
            "2cf24dba5fb0a30e26e83b2ac5b9e29e1b161e5c1fa7425e73043362938b9824"
        );
        assert_eq!(store.read(&r).unwrap(), b"hello");
        assert_eq!(store.put(b"hello", "txt").unwrap(), r);
        fs::write(store.path(&r), b"jello").unwrap();
        assert!(matches!(store.read(&r), Err(PipelineError::Corrupt { .. })));
    }
}

//! Binary tensor artifacts for trained models.
//!
//! Layout:
//!
//! ```text
//! magic    8 bytes   "KCTENSOR"
//! version  u32 LE    1
//! hlen     u32 LE    length of the JSON header
//! header   hlen bytes UTF-8 JSON {model, meta, vocab, tensors, checksum}
//! data     f32 LE values of every tensor, concatenated in header order
//! ```
//!
//! Each header tensor entry is `{name, shape, offset, len}` with `offset` in
//! bytes from the start of the data section. `checksum` is the hex SHA-256
//! of the data section.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Writes `bytes` to `path` through a temporary file and a rename, so
/// readers never observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir)?;
    let name = path
        .file_name()
        .and_then(|n| n.to_str())
        .unwrap_or("artifact");
    let tmp = dir.join(format!(
        ".{name}.{}.{:?}.tmp",
        std::process::id(),
        std::thread::current().id()
    ));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)
}

pub const MAGIC: &[u8; 8] = b"KCTENSOR";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ArtifactError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a tensor artifact")]
    BadMagic,
    #[error("unsupported artifact version {0}")]
    Version(u32),
    #[error("truncated artifact")]
    Truncated,
    #[error("bad header: {0}")]
    Header(#[from] serde_json::Error),
    #[error("checksum mismatch: header {expected}, data {actual}")]
    Checksum { expected: String, actual: String },
    #[error("expected a {expected} artifact, found {found}")]
    ModelKind { expected: String, found: String },
    #[error("missing tensor {0}")]
    MissingTensor(String),
    #[error("tensor {name} has shape {found:?}, expected {expected:?}")]
    Shape {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn from_f64<'a>(
        name: &str,
        shape: &[usize],
        values: impl IntoIterator<Item = &'a f64>,
    ) -> Self {
        let data: Vec<f32> = values.into_iter().map(|&v| v as f32).collect();
        debug_assert_eq!(data.len(), shape.iter().product::<usize>());
        Self {
            name: name.to_string(),
            shape: shape.to_vec(),
            data,
        }
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|&v| v as f64).collect()
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
    len: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    model: String,
    meta: serde_json::Value,
    vocab: Vec<String>,
    tensors: Vec<TensorEntry>,
    checksum: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TensorFile {
    pub model: String,
    pub meta: serde_json::Value,
    pub vocab: Vec<String>,
    pub tensors: Vec<Tensor>,
}

impl TensorFile {
    pub fn tensor(&self, name: &str, shape: &[usize]) -> Result<&Tensor, ArtifactError> {
        let t = self
            .tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| ArtifactError::MissingTensor(name.to_string()))?;
        if t.shape != shape {
            return Err(ArtifactError::Shape {
                name: name.to_string(),
                expected: shape.to_vec(),
                found: t.shape.clone(),
            });
        }
        Ok(t)
    }

    pub fn expect_model(&self, kind: &str) -> Result<(), ArtifactError> {
        if self.model != kind {
            return Err(ArtifactError::ModelKind {
                expected: kind.to_string(),
                found: self.model.clone(),
            });
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut data = Vec::new();
        let mut entries = Vec::new();
        for t in &self.tensors {
            entries.push(TensorEntry {
                name: t.name.clone(),
                shape: t.shape.clone(),
                offset: data.len(),
                len: t.data.len(),
            });
            for v in &t.data {
                data.extend_from_slice(&v.to_le_bytes());
            }
        }
        let header = Header {
            model: self.model.clone(),
            meta: self.meta.clone(),
            vocab: self.vocab.clone(),
            tensors: entries,
            checksum: hex::encode(Sha256::digest(&data)),
        };
        let header = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(16 + header.len() + data.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&data);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ArtifactError> {
        if bytes.len() < 16 {
            return Err(ArtifactError::Truncated);
        }
        if &bytes[..8] != MAGIC {
            return Err(ArtifactError::BadMagic);
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != VERSION {
            return Err(ArtifactError::Version(version));
        }
        let hlen = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
        let header_bytes = bytes.get(16..16 + hlen).ok_or(ArtifactError::Truncated)?;
        let header: Header = serde_json::from_slice(header_bytes)?;
        let data = &bytes[16 + hlen..];
        let actual = hex::encode(Sha256::digest(data));
        if actual != header.checksum {
            return Err(ArtifactError::Checksum {
                expected: header.checksum,
                actual,
            });
        }
        let mut tensors = Vec::with_capacity(header.tensors.len());
        for e in header.tensors {
            if e.len != e.shape.iter().product::<usize>() {
                return Err(ArtifactError::Truncated);
            }
            let raw = data
                .get(e.offset..e.offset + 4 * e.len)
                .ok_or(ArtifactError::Truncated)?;
            let values = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            tensors.push(Tensor {
                name: e.name,
                shape: e.shape,
                data: values,
            });
        }
        Ok(Self {
            model: header.model,
            meta: header.meta,
            vocab: header.vocab,
            tensors,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), ArtifactError> {
        Ok(write_atomic(path, &self.to_bytes())?)
    }

    pub fn load(path: &Path) -> Result<Self, ArtifactError> {
        Self::from_bytes(&fs::read(path)?)
    }
}

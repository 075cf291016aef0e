//! On-disk artifacts.
//!
//! Models are stored as JSON objects carrying a `format_version` and a
//! `checksum`: the hex SHA-256 of the compact serialization of every other
//! field with keys in sorted order. Floats are written in shortest
//! round-trip form, so a loaded model is bit-identical to the saved one.
//!
//! Embedding matrices use a small binary format: the 8-byte magic
//! `TSKEMB1\0`, `u32` row count, `u32` column count, then row-major
//! little-endian `f64` values.

use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::Array2;
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const FORMAT_VERSION: u32 = 1;
pub const EMBEDDING_MAGIC: &[u8; 8] = b"TSKEMB1\0";

#[derive(Debug, Error)]
pub enum ArtifactError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: checksum verification failed: {detail}")]
    Integrity { path: String, detail: String },
    #[error("{path}: format version {found} is not supported (expected {expected})")]
    Version {
        path: String,
        found: u64,
        expected: u32,
    },
    #[error("{path}: {detail}")]
    Format { path: String, detail: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ArtifactError + '_ {
    move |source| ArtifactError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// SHA-256 (hex) of the canonical serialization of `value` without its
/// `checksum` field.
pub fn canonical_checksum(value: &Value) -> String {
    let mut v = value.clone();
    if let Value::Object(map) = &mut v {
        map.remove("checksum");
    }
    // serde_json's default map is ordered by key
    let canonical = serde_json::to_string(&v).expect("serializing a Value cannot fail");
    hex::encode(Sha256::digest(canonical.as_bytes()))
}

/// Serializes `payload` (which must be a JSON object) with an added checksum.
pub fn to_checksummed_string<T: Serialize>(payload: &T) -> Result<(String, String), serde_json::Error> {
    let mut value = serde_json::to_value(payload)?;
    let checksum = canonical_checksum(&value);
    if let Value::Object(map) = &mut value {
        map.insert("checksum".into(), Value::String(checksum.clone()));
    }
    Ok((serde_json::to_string(&value)?, checksum))
}

/// Writes a checksummed JSON artifact and returns its checksum.
pub fn write_checksummed<T: Serialize>(path: &Path, payload: &T) -> Result<String, ArtifactError> {
    let (text, checksum) = to_checksummed_string(payload).map_err(|e| ArtifactError::Format {
        path: path.display().to_string(),
        detail: e.to_string(),
    })?;
    let mut f = fs::File::create(path).map_err(io_err(path))?;
    f.write_all(text.as_bytes()).map_err(io_err(path))?;
    f.write_all(b"\n").map_err(io_err(path))?;
    Ok(checksum)
}

/// Parses and verifies a checksummed JSON artifact.
pub fn from_checksummed_str<T: DeserializeOwned>(text: &str, path: &str) -> Result<(T, String), ArtifactError> {
    let integrity = |detail: String| ArtifactError::Integrity {
        path: path.to_string(),
        detail,
    };
    let value: Value = serde_json::from_str(text).map_err(|e| integrity(format!("unreadable: {e}")))?;
    let stored = value
        .get("checksum")
        .and_then(Value::as_str)
        .ok_or_else(|| integrity("no checksum field".into()))?
        .to_string();
    let actual = canonical_checksum(&value);
    if stored != actual {
        return Err(integrity(format!("stored {stored}, computed {actual}")));
    }
    let version = value.get("format_version").and_then(Value::as_u64).unwrap_or(0);
    if version != u64::from(FORMAT_VERSION) {
        return Err(ArtifactError::Version {
            path: path.to_string(),
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let mut payload = value;
    if let Value::Object(map) = &mut payload {
        map.remove("checksum");
    }
    let parsed = serde_json::from_value(payload).map_err(|e| ArtifactError::Format {
        path: path.to_string(),
        detail: e.to_string(),
    })?;
    Ok((parsed, stored))
}

pub fn read_checksummed<T: DeserializeOwned>(path: &Path) -> Result<(T, String), ArtifactError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    from_checksummed_str(&text, &path.display().to_string())
}

pub fn encode_embeddings(m: &Array2<f64>) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + 8 * m.len());
    out.extend_from_slice(EMBEDDING_MAGIC);
    out.extend_from_slice(&(m.nrows() as u32).to_le_bytes());
    out.extend_from_slice(&(m.ncols() as u32).to_le_bytes());
    for x in m.iter() {
        out.extend_from_slice(&x.to_le_bytes());
    }
    out
}

pub fn decode_embeddings(bytes: &[u8], path: &str) -> Result<Array2<f64>, ArtifactError> {
    let format = |detail: String| ArtifactError::Format {
        path: path.to_string(),
        detail,
    };
    if bytes.len() < 16 || &bytes[..8] != EMBEDDING_MAGIC {
        return Err(format("not an embedding matrix (bad magic)".into()));
    }
    let rows = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let body = &bytes[16..];
    if body.len() != rows * cols * 8 {
        return Err(format(format!(
            "expected {} bytes of data for {rows}x{cols}, found {}",
            rows * cols * 8,
            body.len()
        )));
    }
    let data = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Array2::from_shape_vec((rows, cols), data).map_err(|e| format(e.to_string()))
}

pub fn write_embeddings(path: &Path, m: &Array2<f64>) -> Result<(), ArtifactError> {
    fs::write(path, encode_embeddings(m)).map_err(io_err(path))
}

pub fn read_embeddings(path: &Path) -> Result<Array2<f64>, ArtifactError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    decode_embeddings(&bytes, &path.display().to_string())
}

pub(crate) fn to_nested(m: &Array2<f64>) -> Vec<Vec<f64>> {
    m.rows().into_iter().map(|r| r.to_vec()).collect()
}

pub(crate) fn from_nested(rows: &[Vec<f64>], cols: usize) -> Result<Array2<f64>, String> {
    if let Some(r) = rows.iter().find(|r| r.len() != cols) {
        return Err(format!("row of length {} where {cols} expected", r.len()));
    }
    let data: Vec<f64> = rows.iter().flatten().copied().collect();
    Array2::from_shape_vec((rows.len(), cols), data).map_err(|e| e.to_string())
}

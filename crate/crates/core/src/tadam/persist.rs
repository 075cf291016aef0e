use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{TadamError, TadamModel, TadamParams};
use crate::artifact::{read_checksummed, write_checksummed, FORMAT_VERSION};

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Tensor {
    shape: Vec<usize>,
    /// Row-major.
    data: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TadamFile {
    format_version: u32,
    kind: String,
    params: TadamParams,
    bilinear: bool,
    seed: u64,
    tensors: BTreeMap<String, Tensor>,
}

const KIND: &str = "tadam";

/// Writes the model as checksummed JSON and returns the checksum.
pub fn save_tadam(model: &TadamModel, path: &Path) -> Result<String, TadamError> {
    let tensors = model
        .tensors()
        .into_iter()
        .map(|(name, t)| {
            (
                name.to_string(),
                Tensor {
                    shape: t.shape().to_vec(),
                    data: t.iter().copied().collect(),
                },
            )
        })
        .collect();
    let file = TadamFile {
        format_version: FORMAT_VERSION,
        kind: KIND.into(),
        params: model.params,
        bilinear: model.bilinear,
        seed: model.seed,
        tensors,
    };
    Ok(write_checksummed(path, &file)?)
}

pub fn load_tadam(path: &Path) -> Result<TadamModel, TadamError> {
    let (mut file, _): (TadamFile, _) = read_checksummed(path)?;
    let bad = |detail: String| TadamError::Model {
        path: path.display().to_string(),
        detail,
    };
    if file.kind != KIND {
        return Err(bad(format!("expected a {KIND} model, found {:?}", file.kind)));
    }
    let mut model = TadamModel::new(file.params, file.bilinear, file.seed)?;
    for (name, mut slot) in model.tensors_mut() {
        let t = file
            .tensors
            .remove(name)
            .ok_or_else(|| bad(format!("missing tensor {name}")))?;
        if t.shape != slot.shape() || t.data.len() != slot.len() {
            return Err(bad(format!("tensor {name} has shape {:?}, expected {:?}", t.shape, slot.shape())));
        }
        for (dst, src) in slot.iter_mut().zip(t.data) {
            *dst = src;
        }
    }
    if let Some(extra) = file.tensors.keys().next() {
        return Err(bad(format!("unknown tensor {extra}")));
    }
    if !model.is_finite() {
        return Err(bad("non-finite parameter".into()));
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_exact() {
        let p = TadamParams {
            t: 2,
            l: 3,
            d: 4,
            h: 2,
            ..TadamParams::default()
        };
        let m = TadamModel::new(p, true, 11).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        let sum = save_tadam(&m, &path).unwrap();
        assert_eq!(sum.len(), 64);
        assert_eq!(load_tadam(&path).unwrap(), m);

        let text = std::fs::read_to_string(&path).unwrap();
        std::fs::write(&path, text.replacen("\"bilinear\":true", "\"bilinear\":false", 1)).unwrap();
        assert!(matches!(load_tadam(&path), Err(TadamError::Artifact(_))));
    }
}

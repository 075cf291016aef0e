use std::path::Path;

use ndarray::Array1;
use serde::{Deserialize, Serialize};

use super::{ClusterError, ClusterModel, Dense, Mlp, SaeModel};
use crate::artifact::{from_nested, read_checksummed, to_nested, write_checksummed, FORMAT_VERSION};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    /// Pretrained autoencoder.
    Sae,
    /// Encoder plus centroids.
    Cluster,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Layers {
    dims: Vec<usize>,
    weights: Vec<Vec<Vec<f64>>>,
    biases: Vec<Vec<f64>>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    format_version: u32,
    kind: ModelKind,
    dims: Vec<usize>,
    weights: Vec<Vec<Vec<f64>>>,
    biases: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    decoder: Option<Layers>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    centroids: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    alpha: Option<f64>,
    seed: u64,
    /// Training runs on one thread; recorded for reproducibility.
    threads: usize,
}

fn layers_of(net: &Mlp) -> Layers {
    Layers {
        dims: net.dims(),
        weights: net.layers.iter().map(|l| to_nested(&l.weight)).collect(),
        biases: net.layers.iter().map(|l| l.bias.to_vec()).collect(),
    }
}

fn mlp_of(layers: &Layers, path: &str) -> Result<Mlp, ClusterError> {
    let bad = |detail: String| ClusterError::Model {
        path: path.to_string(),
        detail,
    };
    let n = layers.dims.len().saturating_sub(1);
    if n == 0 || layers.weights.len() != n || layers.biases.len() != n {
        return Err(bad(format!(
            "{} dims need {n} weight matrices and bias vectors, found {} and {}",
            layers.dims.len(),
            layers.weights.len(),
            layers.biases.len()
        )));
    }
    let mut out = Vec::with_capacity(n);
    for l in 0..n {
        let (input, output) = (layers.dims[l], layers.dims[l + 1]);
        if layers.weights[l].len() != input || layers.biases[l].len() != output {
            return Err(bad(format!("layer {l} does not have shape {input}x{output}")));
        }
        let weight = from_nested(&layers.weights[l], output).map_err(|e| bad(format!("layer {l}: {e}")))?;
        out.push(Dense {
            weight,
            bias: Array1::from(layers.biases[l].clone()),
        });
    }
    Ok(Mlp { layers: out })
}

fn file_of(encoder: &Mlp, kind: ModelKind, seed: u64) -> ModelFile {
    let enc = layers_of(encoder);
    ModelFile {
        format_version: FORMAT_VERSION,
        kind,
        dims: enc.dims,
        weights: enc.weights,
        biases: enc.biases,
        decoder: None,
        centroids: None,
        alpha: None,
        seed,
        threads: 1,
    }
}

fn read(path: &Path, kind: ModelKind) -> Result<(ModelFile, Mlp), ClusterError> {
    let (file, _): (ModelFile, _) = read_checksummed(path)?;
    let name = path.display().to_string();
    if file.kind != kind {
        return Err(ClusterError::Model {
            path: name,
            detail: format!("expected a {kind:?} model, found {:?}", file.kind),
        });
    }
    let encoder = mlp_of(
        &Layers {
            dims: file.dims.clone(),
            weights: file.weights.clone(),
            biases: file.biases.clone(),
        },
        &name,
    )?;
    Ok((file, encoder))
}

/// Writes an autoencoder and returns the file checksum.
pub fn save_sae(model: &SaeModel, path: &Path) -> Result<String, ClusterError> {
    let mut file = file_of(&model.encoder, ModelKind::Sae, model.seed);
    file.decoder = Some(layers_of(&model.decoder));
    Ok(write_checksummed(path, &file)?)
}

pub fn load_sae(path: &Path) -> Result<SaeModel, ClusterError> {
    let (file, encoder) = read(path, ModelKind::Sae)?;
    let name = path.display().to_string();
    let decoder = file.decoder.as_ref().ok_or_else(|| ClusterError::Model {
        path: name.clone(),
        detail: "autoencoder file has no decoder".into(),
    })?;
    let decoder = mlp_of(decoder, &name)?;
    let mirrored: Vec<usize> = encoder.dims().into_iter().rev().collect();
    if decoder.dims() != mirrored {
        return Err(ClusterError::Model {
            path: name,
            detail: "decoder dims are not the reverse of the encoder dims".into(),
        });
    }
    Ok(SaeModel {
        encoder,
        decoder,
        seed: file.seed,
    })
}

/// Writes a clustering model and returns the file checksum.
pub fn save_model(model: &ClusterModel, path: &Path) -> Result<String, ClusterError> {
    let mut file = file_of(&model.encoder, ModelKind::Cluster, model.seed);
    file.centroids = Some(to_nested(&model.centroids));
    file.alpha = Some(model.alpha);
    Ok(write_checksummed(path, &file)?)
}

pub fn load_model(path: &Path) -> Result<ClusterModel, ClusterError> {
    let (file, encoder) = read(path, ModelKind::Cluster)?;
    let name = path.display().to_string();
    let missing = |what: &str| ClusterError::Model {
        path: name.clone(),
        detail: format!("clustering model has no {what}"),
    };
    let centroids = file.centroids.as_ref().ok_or_else(|| missing("centroids"))?;
    let alpha = file.alpha.ok_or_else(|| missing("alpha"))?;
    let centroids = from_nested(centroids, encoder.output_dim()).map_err(|detail| ClusterError::Model {
        path: name.clone(),
        detail: format!("centroids: {detail}"),
    })?;
    ClusterModel::new(encoder, centroids, alpha, file.seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::artifact::ArtifactError;
    use ndarray::Array2;

    fn model(seed: u64) -> ClusterModel {
        let sae = SaeModel::new(&[5, 4, 3], seed).unwrap();
        let centroids = Array2::from_shape_fn((3, 3), |(i, j)| (i as f64 + 0.1) / (j as f64 + 7.0));
        ClusterModel::new(sae.encoder, centroids, 1.0, seed).unwrap()
    }

    #[test]
    fn round_trip_is_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        let m = model(3);
        save_model(&m, &path).unwrap();
        let back = load_model(&path).unwrap();
        assert_eq!(back, m);

        let sae = SaeModel::new(&[6, 5, 2], 8).unwrap();
        let sp = dir.path().join("sae.json");
        save_sae(&sae, &sp).unwrap();
        assert_eq!(load_sae(&sp).unwrap(), sae);
        assert!(matches!(load_model(&sp), Err(ClusterError::Model { .. })));
    }

    #[test]
    fn truncated_file_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        save_model(&model(1), &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        std::fs::write(&path, &text[..text.len() / 3]).unwrap();
        assert!(matches!(
            load_model(&path),
            Err(ClusterError::Artifact(ArtifactError::Integrity { .. }))
        ));
    }

    #[test]
    fn seeds_change_checksum() {
        let dir = tempfile::tempdir().unwrap();
        let a = save_model(&model(1), &dir.path().join("a.json")).unwrap();
        let b = save_model(&model(2), &dir.path().join("b.json")).unwrap();
        let a2 = save_model(&model(1), &dir.path().join("a2.json")).unwrap();
        assert_ne!(a, b);
        assert_eq!(a, a2);
    }
}

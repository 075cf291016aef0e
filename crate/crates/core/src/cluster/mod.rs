//! Topic clustering of segment embeddings.
//!
//! A mirrored autoencoder is first trained to reconstruct the embeddings.
//! k-means on its latent codes seeds `m` centroids, and self-training then
//! sharpens the Student's t soft assignment `Q` toward a target `P` by
//! gradient descent on `KL(P‖Q)`, moving both the encoder and the centroids.

mod dec;
mod kmeans;
mod persist;
mod sae;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::artifact::ArtifactError;

pub use dec::{
    argmax_rows, kl_divergence, kl_gradients, self_train, self_train_gradients, soft_assign, target_dist, KlGradients,
    SelfTrainGrads, SelfTrainHistory,
};
pub use kmeans::{kmeans, KMeansParams, KMeansResult};
pub use persist::{load_model, load_sae, save_model, save_sae, ModelKind};
pub use sae::{
    encode_latent, reconstruction_gradients, reconstruction_loss, sae_pretrain, sae_train, Dense, Mlp,
    PretrainReport, SaeGrads, SaeModel,
};

/// Full-batch self-training is used up to this many points.
pub const FULL_BATCH_LIMIT: usize = 10_000;

#[derive(Debug, Error)]
pub enum ClusterError {
    #[error("invalid parameters: {0}")]
    Params(String),
    #[error("input has {got} columns, model expects {expected}")]
    DimMismatch { expected: usize, got: usize },
    #[error("cannot form {m} clusters from {n} points")]
    TooFewPoints { n: usize, m: usize },
    #[error("{stage} diverged at iteration {iteration}: {detail}")]
    Diverged {
        stage: &'static str,
        iteration: usize,
        detail: String,
        /// Last model known to be finite, when one exists.
        checkpoint: Option<Box<ClusterModel>>,
    },
    #[error(transparent)]
    Artifact(#[from] ArtifactError),
    #[error("model file {path}: {detail}")]
    Model { path: String, detail: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainParams {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
}

impl Default for PretrainParams {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 32,
            learning_rate: 0.01,
            momentum: 0.9,
        }
    }
}

impl PretrainParams {
    pub fn validate(&self) -> Result<(), ClusterError> {
        if self.batch_size == 0 || !(self.learning_rate >= 0.0) || !(0.0..1.0).contains(&self.momentum) {
            return Err(ClusterError::Params(
                "pretraining needs batch_size > 0, learning_rate >= 0 and momentum in [0, 1)".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SelfTrainParams {
    pub learning_rate: f64,
    pub update_interval: usize,
    pub iter_max: usize,
    /// `None` trains on the full set up to [`FULL_BATCH_LIMIT`] points and
    /// on batches of 256 above it.
    pub batch_size: Option<usize>,
    pub freeze_centroids: bool,
}

impl Default for SelfTrainParams {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            update_interval: 500,
            iter_max: 20_000,
            batch_size: None,
            freeze_centroids: false,
        }
    }
}

impl SelfTrainParams {
    pub fn validate(&self) -> Result<(), ClusterError> {
        if self.update_interval == 0 || !(self.learning_rate >= 0.0) || self.batch_size == Some(0) {
            return Err(ClusterError::Params(
                "self-training needs update_interval > 0, learning_rate >= 0 and a positive batch size".into(),
            ));
        }
        Ok(())
    }

    pub(crate) fn effective_batch(&self, n: usize) -> usize {
        match self.batch_size {
            Some(b) => b.min(n),
            None if n <= FULL_BATCH_LIMIT => n,
            None => 256,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainParams {
    pub seed: u64,
    pub pretrain: PretrainParams,
    pub selftrain: SelfTrainParams,
    pub kmeans: KMeansParams,
}

/// Encoder, centroids and the Student's t degrees of freedom.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterModel {
    pub encoder: Mlp,
    /// `m × latent`.
    pub centroids: Array2<f64>,
    pub alpha: f64,
    pub seed: u64,
}

impl ClusterModel {
    pub fn new(encoder: Mlp, centroids: Array2<f64>, alpha: f64, seed: u64) -> Result<Self, ClusterError> {
        if !(alpha > 0.0) {
            return Err(ClusterError::Params(format!("alpha must be positive, got {alpha}")));
        }
        if centroids.nrows() < 2 {
            return Err(ClusterError::Params("at least two clusters are required".into()));
        }
        if centroids.ncols() != encoder.output_dim() {
            return Err(ClusterError::DimMismatch {
                expected: encoder.output_dim(),
                got: centroids.ncols(),
            });
        }
        Ok(Self {
            encoder,
            centroids,
            alpha,
            seed,
        })
    }

    pub fn m(&self) -> usize {
        self.centroids.nrows()
    }

    pub fn encode(&self, x: &Array2<f64>) -> Result<Array2<f64>, ClusterError> {
        encode_latent(&self.encoder, x)
    }

    pub fn soft_assign(&self, x: &Array2<f64>) -> Result<Array2<f64>, ClusterError> {
        Ok(soft_assign(&self.encode(x)?, &self.centroids, self.alpha))
    }

    pub fn predict(&self, x: &Array2<f64>) -> Result<Vec<usize>, ClusterError> {
        Ok(argmax_rows(&self.soft_assign(x)?))
    }
}

/// Everything produced by [`fit`].
#[derive(Debug, Clone)]
pub struct FitResult {
    pub model: ClusterModel,
    pub assignments: Vec<usize>,
    pub kmeans_inertia: f64,
    pub history: SelfTrainHistory,
}

/// Initializes centroids by k-means on the pretrained encoder's codes and
/// runs self-training.
pub fn fit(sae: &SaeModel, x: &Array2<f64>, m: usize, alpha: f64, tp: &TrainParams) -> Result<FitResult, ClusterError> {
    if m < 2 {
        return Err(ClusterError::Params("at least two clusters are required".into()));
    }
    let z = sae.encode(x)?;
    let km = kmeans(&z, m, &tp.kmeans, tp.seed)?;
    let model = ClusterModel::new(sae.encoder.clone(), km.centroids, alpha, tp.seed)?;
    let (model, assignments, history) = self_train(model, x, &tp.selftrain)?;
    Ok(FitResult {
        model,
        assignments,
        kmeans_inertia: km.inertia,
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn blobs() -> (Array2<f64>, Vec<usize>) {
        let mut x = Array2::zeros((30, 2));
        let mut truth = Vec::new();
        for i in 0..30 {
            let c = i % 3;
            truth.push(c);
            let jitter = ((i * 37) % 11) as f64 / 110.0;
            x[[i, 0]] = [0.0, 5.0, 0.0][c] + jitter;
            x[[i, 1]] = [0.0, 0.0, 5.0][c] - jitter;
        }
        (x, truth)
    }

    fn identity_encoder() -> Mlp {
        Mlp {
            layers: vec![Dense {
                weight: Array2::eye(2),
                bias: ndarray::Array1::zeros(2),
            }],
        }
    }

    #[test]
    fn iter_max_zero_keeps_initial_assignments() {
        let (x, _) = blobs();
        let km = kmeans(&x, 3, &KMeansParams::default(), 0).unwrap();
        let model = ClusterModel::new(identity_encoder(), km.centroids.clone(), 1.0, 0).unwrap();
        let params = SelfTrainParams {
            iter_max: 0,
            ..SelfTrainParams::default()
        };
        let (after, labels, history) = self_train(model.clone(), &x, &params).unwrap();
        assert_eq!(after, model);
        assert_eq!(labels, km.assignments);
        assert!(history.kl.is_empty());
    }

    #[test]
    fn separated_blobs_stop_at_first_check() {
        let (x, _) = blobs();
        let km = kmeans(&x, 3, &KMeansParams::default(), 0).unwrap();
        let model = ClusterModel::new(identity_encoder(), km.centroids.clone(), 1.0, 0).unwrap();
        let params = SelfTrainParams {
            update_interval: 20,
            ..SelfTrainParams::default()
        };
        let (_, labels, history) = self_train(model, &x, &params).unwrap();
        assert_eq!(history.refresh_iters, vec![20]);
        assert!(history.converged);
        assert_eq!(labels, km.assignments);
    }

    #[test]
    fn frozen_centroids_do_not_move() {
        let (x, _) = blobs();
        let km = kmeans(&x, 3, &KMeansParams::default(), 0).unwrap();
        let model = ClusterModel::new(identity_encoder(), km.centroids.clone(), 1.0, 0).unwrap();
        let params = SelfTrainParams {
            update_interval: 5,
            iter_max: 5,
            freeze_centroids: true,
            ..SelfTrainParams::default()
        };
        let (after, _, _) = self_train(model, &x, &params).unwrap();
        assert_eq!(after.centroids, km.centroids);
        assert_ne!(after.encoder, identity_encoder());
    }

    #[test]
    fn model_invariants() {
        assert!(ClusterModel::new(identity_encoder(), array![[0.0, 0.0]], 1.0, 0).is_err());
        assert!(ClusterModel::new(identity_encoder(), array![[0.0, 0.0], [1.0, 1.0]], 0.0, 0).is_err());
        assert!(matches!(
            ClusterModel::new(identity_encoder(), array![[0.0], [1.0]], 1.0, 0),
            Err(ClusterError::DimMismatch { .. })
        ));
    }

    #[test]
    fn sae_gradients_match_finite_differences() {
        let model = SaeModel::new(&[3, 4, 3], 2).unwrap();
        let x = array![
            [0.2, -0.4, 1.0],
            [1.1, 0.3, -0.2],
            [-0.5, 0.8, 0.6],
            [0.0, 0.1, -1.3],
            [0.7, 0.7, 0.7]
        ];
        let (_, g) = reconstruction_gradients(&model, &x).unwrap();
        let eps = 1e-5;
        let check = |perturb: &dyn Fn(&mut SaeModel, f64), analytic: f64, name: &str| {
            let mut plus = model.clone();
            perturb(&mut plus, eps);
            let mut minus = model.clone();
            perturb(&mut minus, -eps);
            let fd = (reconstruction_loss(&plus, &x).unwrap() - reconstruction_loss(&minus, &x).unwrap()) / (2.0 * eps);
            assert!((fd - analytic).abs() <= 1e-7 + 1e-4 * fd.abs(), "{name}: fd {fd} analytic {analytic}");
        };
        for (l, layer) in g.encoder.iter().enumerate() {
            for ((r, c), &a) in layer.weight.indexed_iter() {
                check(&|m: &mut SaeModel, e| m.encoder.layers[l].weight[[r, c]] += e, a, "enc W");
            }
            for (r, &a) in layer.bias.indexed_iter() {
                check(&|m: &mut SaeModel, e| m.encoder.layers[l].bias[r] += e, a, "enc b");
            }
        }
        for (l, layer) in g.decoder.iter().enumerate() {
            for ((r, c), &a) in layer.weight.indexed_iter() {
                check(&|m: &mut SaeModel, e| m.decoder.layers[l].weight[[r, c]] += e, a, "dec W");
            }
            for (r, &a) in layer.bias.indexed_iter() {
                check(&|m: &mut SaeModel, e| m.decoder.layers[l].bias[r] += e, a, "dec b");
            }
        }
    }
}

//! A desk-scale topic-aware dual-attention matching network.
//!
//! A context is a sequence of topic segments. Given a candidate response,
//! every segment is weighted by its relevance to the response (a word-level
//! bilinear matching map and a segment-level cosine), the weighted segments
//! are cross-attended with the response in both directions, and a GRU over
//! the per-segment matching vectors, together with a projection of the last
//! segment's vector, produces a matching score in `(0, 1)`.
//!
//! Gradients come from a hand-written backward pass and are checked against
//! central finite differences by [`grad_check`].

mod backward;
mod forward;
mod input;
mod persist;
mod train;
#[cfg(test)]
mod tests;

use ndarray::{Array1, Array2, Array3, ArrayViewD, ArrayViewMutD, IxDyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::artifact::ArtifactError;
use crate::embed::EmbedError;

pub use backward::{bce_loss, gradient};
pub use forward::{attentive_module, combine_and_weight, forward, segment_level_weights, AttentionOutput, TadamTrace};
pub use input::{build_input, MatchInstance, TadamInput, TokenEmbedder, CLS, SEP};
pub use persist::{load_tadam, save_tadam};
pub use train::{demo_train, grad_check, precision_at_1, score, GradCheckReport, TensorCheck, TrainReport};

#[derive(Debug, Error)]
pub enum TadamError {
    #[error("invalid parameters: {0}")]
    Params(String),
    #[error("invalid input: {0}")]
    Input(String),
    #[error("token encoder failed: {0}")]
    Encoder(#[from] EmbedError),
    #[error("non-finite gradient in {tensor}")]
    NonFiniteGradient { tensor: String },
    #[error("training diverged at epoch {epoch} (loss {loss}); curve so far: {curve:?}")]
    Diverged { epoch: usize, loss: f64, curve: Vec<f64> },
    #[error(transparent)]
    Artifact(#[from] ArtifactError),
    #[error("model file {path}: {detail}")]
    Model { path: String, detail: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TadamParams {
    /// Maximum number of segments.
    #[serde(rename = "T")]
    pub t: usize,
    /// Maximum tokens per segment and per response.
    #[serde(rename = "L")]
    pub l: usize,
    /// Hidden dimension.
    pub d: usize,
    /// Third dimension of `W1`.
    pub h: usize,
    pub beta: f64,
    /// Budget for the joint token sequence, markers included.
    pub max_seq_len: usize,
}

impl Default for TadamParams {
    fn default() -> Self {
        Self {
            t: 10,
            l: 16,
            d: 16,
            h: 8,
            beta: 0.5,
            max_seq_len: 350,
        }
    }
}

impl TadamParams {
    pub fn validate(&self) -> Result<(), TadamError> {
        if self.t == 0 || self.l == 0 || self.d == 0 || self.h == 0 || self.max_seq_len == 0 {
            return Err(TadamError::Params("T, L, d, h and max_seq_len must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(TadamError::Params(format!("beta must lie in [0, 1], got {}", self.beta)));
        }
        Ok(())
    }
}

/// Layer norm followed by a two-layer ReLU feed-forward network; the
/// attention itself has no parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Attentive {
    pub ln_gain: Array1<f64>,
    pub ln_bias: Array1<f64>,
    /// `d × d`, applied to row vectors.
    pub ffn_w1: Array2<f64>,
    pub ffn_b1: Array1<f64>,
    pub ffn_w2: Array2<f64>,
    pub ffn_b2: Array1<f64>,
}

/// GRU with row-vector inputs: `z = σ(x W_z + h U_z + b_z)`,
/// `r = σ(x W_r + h U_r + b_r)`, `n = tanh(x W_n + (r ⊙ h) U_n + b_n)`,
/// `h' = z ⊙ h + (1 − z) ⊙ n`.
#[derive(Debug, Clone, PartialEq)]
pub struct Gru {
    pub w_z: Array2<f64>,
    pub u_z: Array2<f64>,
    pub b_z: Array1<f64>,
    pub w_r: Array2<f64>,
    pub u_r: Array2<f64>,
    pub b_r: Array1<f64>,
    pub w_n: Array2<f64>,
    pub u_n: Array2<f64>,
    pub b_n: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TadamModel {
    pub params: TadamParams,
    /// Use every entry of `W1` instead of its diagonal slab `W1[k, k, v]`.
    pub bilinear: bool,
    pub seed: u64,
    /// `d × d × h`.
    pub w1: Array3<f64>,
    /// `h`.
    pub v1: Array1<f64>,
    /// `2L`.
    pub w_prime: Array1<f64>,
    /// `T`.
    pub b: Array1<f64>,
    /// Segments attend to the response.
    pub a1: Attentive,
    /// The response attends to a segment.
    pub a2: Attentive,
    /// Input and hidden size `2d`.
    pub gru: Gru,
    /// `2d × 2d`, applied to column vectors.
    pub w3: Array2<f64>,
    pub b3: Array1<f64>,
    /// `4d`.
    pub w4: Array1<f64>,
    pub b4: f64,
}

fn uniform<R: Rng>(rng: &mut R, limit: f64) -> f64 {
    rng.random_range(-limit..=limit)
}

fn glorot<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> Array2<f64> {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    Array2::from_shape_simple_fn((rows, cols), || uniform(rng, limit))
}

fn glorot_vec<R: Rng>(rng: &mut R, len: usize) -> Array1<f64> {
    let limit = (6.0 / (len + 1) as f64).sqrt();
    Array1::from_shape_simple_fn(len, || uniform(rng, limit))
}

impl Attentive {
    fn new<R: Rng>(rng: &mut R, d: usize) -> Self {
        Self {
            ln_gain: Array1::ones(d),
            ln_bias: Array1::zeros(d),
            ffn_w1: glorot(rng, d, d),
            ffn_b1: Array1::zeros(d),
            ffn_w2: glorot(rng, d, d),
            ffn_b2: Array1::zeros(d),
        }
    }

    fn zeros(d: usize) -> Self {
        Self {
            ln_gain: Array1::zeros(d),
            ln_bias: Array1::zeros(d),
            ffn_w1: Array2::zeros((d, d)),
            ffn_b1: Array1::zeros(d),
            ffn_w2: Array2::zeros((d, d)),
            ffn_b2: Array1::zeros(d),
        }
    }
}

impl Gru {
    fn new<R: Rng>(rng: &mut R, n: usize) -> Self {
        Self {
            w_z: glorot(rng, n, n),
            u_z: glorot(rng, n, n),
            b_z: Array1::zeros(n),
            w_r: glorot(rng, n, n),
            u_r: glorot(rng, n, n),
            b_r: Array1::zeros(n),
            w_n: glorot(rng, n, n),
            u_n: glorot(rng, n, n),
            b_n: Array1::zeros(n),
        }
    }

    fn zeros(n: usize) -> Self {
        Self {
            w_z: Array2::zeros((n, n)),
            u_z: Array2::zeros((n, n)),
            b_z: Array1::zeros(n),
            w_r: Array2::zeros((n, n)),
            u_r: Array2::zeros((n, n)),
            b_r: Array1::zeros(n),
            w_n: Array2::zeros((n, n)),
            u_n: Array2::zeros((n, n)),
            b_n: Array1::zeros(n),
        }
    }
}

macro_rules! tensor_list {
    ($self:ident, $view:ident, $b4:expr) => {
        vec![
            ("W1", $self.w1.$view().into_dyn()),
            ("V1", $self.v1.$view().into_dyn()),
            ("W_prime", $self.w_prime.$view().into_dyn()),
            ("b", $self.b.$view().into_dyn()),
            ("A1.ln_gain", $self.a1.ln_gain.$view().into_dyn()),
            ("A1.ln_bias", $self.a1.ln_bias.$view().into_dyn()),
            ("A1.ffn_w1", $self.a1.ffn_w1.$view().into_dyn()),
            ("A1.ffn_b1", $self.a1.ffn_b1.$view().into_dyn()),
            ("A1.ffn_w2", $self.a1.ffn_w2.$view().into_dyn()),
            ("A1.ffn_b2", $self.a1.ffn_b2.$view().into_dyn()),
            ("A2.ln_gain", $self.a2.ln_gain.$view().into_dyn()),
            ("A2.ln_bias", $self.a2.ln_bias.$view().into_dyn()),
            ("A2.ffn_w1", $self.a2.ffn_w1.$view().into_dyn()),
            ("A2.ffn_b1", $self.a2.ffn_b1.$view().into_dyn()),
            ("A2.ffn_w2", $self.a2.ffn_w2.$view().into_dyn()),
            ("A2.ffn_b2", $self.a2.ffn_b2.$view().into_dyn()),
            ("GRU.w_z", $self.gru.w_z.$view().into_dyn()),
            ("GRU.u_z", $self.gru.u_z.$view().into_dyn()),
            ("GRU.b_z", $self.gru.b_z.$view().into_dyn()),
            ("GRU.w_r", $self.gru.w_r.$view().into_dyn()),
            ("GRU.u_r", $self.gru.u_r.$view().into_dyn()),
            ("GRU.b_r", $self.gru.b_r.$view().into_dyn()),
            ("GRU.w_n", $self.gru.w_n.$view().into_dyn()),
            ("GRU.u_n", $self.gru.u_n.$view().into_dyn()),
            ("GRU.b_n", $self.gru.b_n.$view().into_dyn()),
            ("W3", $self.w3.$view().into_dyn()),
            ("b3", $self.b3.$view().into_dyn()),
            ("W4", $self.w4.$view().into_dyn()),
            ("b4", $b4),
        ]
    };
}

impl TadamModel {
    /// Fan-scaled uniform initialization. In the diagonal reading only
    /// `W1[k, k, ·]` is initialized; the remaining entries stay zero.
    pub fn new(params: TadamParams, bilinear: bool, seed: u64) -> Result<Self, TadamError> {
        params.validate()?;
        let TadamParams { t, l, d, h, .. } = params;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w1_limit = (6.0 / (d + h) as f64).sqrt();
        let mut w1 = Array3::zeros((d, d, h));
        for k in 0..d {
            for k2 in 0..d {
                if bilinear || k == k2 {
                    for v in 0..h {
                        w1[[k, k2, v]] = uniform(&mut rng, w1_limit);
                    }
                }
            }
        }
        Ok(Self {
            params,
            bilinear,
            seed,
            w1,
            v1: glorot_vec(&mut rng, h),
            w_prime: glorot_vec(&mut rng, 2 * l),
            b: Array1::zeros(t),
            a1: Attentive::new(&mut rng, d),
            a2: Attentive::new(&mut rng, d),
            gru: Gru::new(&mut rng, 2 * d),
            w3: glorot(&mut rng, 2 * d, 2 * d),
            b3: Array1::zeros(2 * d),
            w4: glorot_vec(&mut rng, 4 * d),
            b4: 0.0,
        })
    }

    /// A model-shaped container of zeros, used for gradients.
    pub fn zeros_like(&self) -> Self {
        let TadamParams { t, l, d, h, .. } = self.params;
        Self {
            params: self.params,
            bilinear: self.bilinear,
            seed: self.seed,
            w1: Array3::zeros((d, d, h)),
            v1: Array1::zeros(h),
            w_prime: Array1::zeros(2 * l),
            b: Array1::zeros(t),
            a1: Attentive::zeros(d),
            a2: Attentive::zeros(d),
            gru: Gru::zeros(2 * d),
            w3: Array2::zeros((2 * d, 2 * d)),
            b3: Array1::zeros(2 * d),
            w4: Array1::zeros(4 * d),
            b4: 0.0,
        }
    }

    /// Every trainable tensor, by name.
    pub fn tensors(&self) -> Vec<(&'static str, ArrayViewD<'_, f64>)> {
        let b4 = ArrayViewD::from_shape(IxDyn(&[1]), std::slice::from_ref(&self.b4)).unwrap();
        tensor_list!(self, view, b4)
    }

    pub fn tensors_mut(&mut self) -> Vec<(&'static str, ArrayViewMutD<'_, f64>)> {
        let b4 = ArrayViewMutD::from_shape(IxDyn(&[1]), std::slice::from_mut(&mut self.b4)).unwrap();
        tensor_list!(self, view_mut, b4)
    }

    /// `self += alpha * other`, tensor by tensor.
    pub fn scaled_add(&mut self, alpha: f64, other: &TadamModel) {
        let theirs = other.tensors();
        for ((_, mut mine), (_, g)) in self.tensors_mut().into_iter().zip(theirs) {
            mine.scaled_add(alpha, &g);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|(_, t)| t.iter().all(|v| v.is_finite()))
    }
}

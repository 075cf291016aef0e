use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{ClusterError, PretrainParams};

/// Fully connected layer computing `x · weight + bias` for row inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    /// `in × out`.
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            weight: Array2::zeros((input, output)),
            bias: Array1::zeros(output),
        }
    }

    /// Glorot-uniform weights, zero biases.
    pub fn glorot<R: Rng>(input: usize, output: usize, rng: &mut R) -> Self {
        let limit = (6.0 / (input + output) as f64).sqrt();
        let weight = Array2::from_shape_simple_fn((input, output), || rng.random_range(-limit..=limit));
        Self {
            weight,
            bias: Array1::zeros(output),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.ncols()
    }

    fn apply(&self, x: &Array2<f64>) -> Array2<f64> {
        x.dot(&self.weight) + &self.bias
    }

    fn scaled_add(&mut self, alpha: f64, other: &Dense) {
        self.weight.scaled_add(alpha, &other.weight);
        self.bias.scaled_add(alpha, &other.bias);
    }

    fn is_finite(&self) -> bool {
        self.weight.iter().chain(self.bias.iter()).all(|x| x.is_finite())
    }
}

/// A stack of dense layers with ReLU between them and a linear output.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

impl Mlp {
    pub fn glorot<R: Rng>(dims: &[usize], rng: &mut R) -> Self {
        Self {
            layers: dims.windows(2).map(|w| Dense::glorot(w[0], w[1], rng)).collect(),
        }
    }

    /// `[input, hidden..., output]`.
    pub fn dims(&self) -> Vec<usize> {
        let mut dims: Vec<usize> = self.layers.iter().map(Dense::input_dim).collect();
        dims.extend(self.layers.last().map(Dense::output_dim));
        dims
    }

    pub fn input_dim(&self) -> usize {
        self.layers.first().map_or(0, Dense::input_dim)
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, Dense::output_dim)
    }

    pub fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        let last = self.layers.len().saturating_sub(1);
        let mut h = x.clone();
        for (l, layer) in self.layers.iter().enumerate() {
            h = layer.apply(&h);
            if l < last {
                h.mapv_inplace(relu);
            }
        }
        h
    }

    /// Activations of every layer, input first.
    pub(crate) fn forward_cached(&self, x: &Array2<f64>) -> Vec<Array2<f64>> {
        let last = self.layers.len().saturating_sub(1);
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.clone());
        for (l, layer) in self.layers.iter().enumerate() {
            let mut h = layer.apply(&acts[l]);
            if l < last {
                h.mapv_inplace(relu);
            }
            acts.push(h);
        }
        acts
    }

    /// Parameter gradients and the gradient with respect to the input, given
    /// the cached activations and the gradient at the output.
    pub(crate) fn backward(&self, acts: &[Array2<f64>], d_out: Array2<f64>) -> (Vec<Dense>, Array2<f64>) {
        let last = self.layers.len().saturating_sub(1);
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut d = d_out;
        for (l, layer) in self.layers.iter().enumerate().rev() {
            if l < last {
                // ReLU output is positive exactly where the unit was active
                d.zip_mut_with(&acts[l + 1], |g, &a| {
                    if a <= 0.0 {
                        *g = 0.0;
                    }
                });
            }
            grads.push(Dense {
                weight: acts[l].t().dot(&d),
                bias: d.sum_axis(Axis(0)),
            });
            d = d.dot(&layer.weight.t());
        }
        grads.reverse();
        (grads, d)
    }

    pub(crate) fn scaled_add(&mut self, alpha: f64, grads: &[Dense]) {
        for (layer, g) in self.layers.iter_mut().zip(grads) {
            layer.scaled_add(alpha, g);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(Dense::is_finite)
    }

    pub(crate) fn zeros_like(&self) -> Vec<Dense> {
        self.layers
            .iter()
            .map(|l| Dense::zeros(l.input_dim(), l.output_dim()))
            .collect()
    }
}

fn relu(x: f64) -> f64 {
    x.max(0.0)
}

/// Mirrored autoencoder: the decoder's dims are the encoder's reversed.
#[derive(Debug, Clone, PartialEq)]
pub struct SaeModel {
    pub encoder: Mlp,
    pub decoder: Mlp,
    /// Seed used to initialize and train the model.
    pub seed: u64,
}

impl SaeModel {
    /// Glorot-initialized model with encoder dims `[D_in, h_1, ..., latent]`.
    pub fn new(dims: &[usize], seed: u64) -> Result<Self, ClusterError> {
        validate_dims(dims)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let encoder = Mlp::glorot(dims, &mut rng);
        let rev: Vec<usize> = dims.iter().rev().copied().collect();
        let decoder = Mlp::glorot(&rev, &mut rng);
        Ok(Self { encoder, decoder, seed })
    }

    pub fn dims(&self) -> Vec<usize> {
        self.encoder.dims()
    }

    pub fn encode(&self, x: &Array2<f64>) -> Result<Array2<f64>, ClusterError> {
        encode_latent(&self.encoder, x)
    }

    pub fn reconstruct(&self, x: &Array2<f64>) -> Result<Array2<f64>, ClusterError> {
        Ok(self.decoder.forward(&self.encode(x)?))
    }
}

pub(crate) fn validate_dims(dims: &[usize]) -> Result<(), ClusterError> {
    if dims.len() < 2 || dims.contains(&0) {
        return Err(ClusterError::Params(format!(
            "architecture needs at least an input and a latent dimension, all positive; got {dims:?}"
        )));
    }
    Ok(())
}

/// Forward pass through an encoder.
pub fn encode_latent(encoder: &Mlp, x: &Array2<f64>) -> Result<Array2<f64>, ClusterError> {
    if x.ncols() != encoder.input_dim() {
        return Err(ClusterError::DimMismatch {
            expected: encoder.input_dim(),
            got: x.ncols(),
        });
    }
    Ok(encoder.forward(x))
}

/// Gradients for both halves of an autoencoder.
#[derive(Debug, Clone, PartialEq)]
pub struct SaeGrads {
    pub encoder: Vec<Dense>,
    pub decoder: Vec<Dense>,
}

/// Mean over rows of `‖decode(encode(x)) − x‖²`.
pub fn reconstruction_loss(model: &SaeModel, x: &Array2<f64>) -> Result<f64, ClusterError> {
    let diff = model.reconstruct(x)? - x;
    Ok(diff.mapv(|v| v * v).sum() / x.nrows() as f64)
}

pub fn reconstruction_gradients(model: &SaeModel, x: &Array2<f64>) -> Result<(f64, SaeGrads), ClusterError> {
    if x.ncols() != model.encoder.input_dim() {
        return Err(ClusterError::DimMismatch {
            expected: model.encoder.input_dim(),
            got: x.ncols(),
        });
    }
    let b = x.nrows() as f64;
    let enc_acts = model.encoder.forward_cached(x);
    let dec_acts = model.decoder.forward_cached(enc_acts.last().unwrap());
    let diff = dec_acts.last().unwrap() - x;
    let loss = diff.mapv(|v| v * v).sum() / b;
    let (decoder, dz) = model.decoder.backward(&dec_acts, diff * (2.0 / b));
    let (encoder, _) = model.encoder.backward(&enc_acts, dz);
    Ok((loss, SaeGrads { encoder, decoder }))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PretrainReport {
    /// Mean reconstruction loss over the whole set after each epoch.
    pub epoch_losses: Vec<f64>,
    pub final_loss: f64,
}

/// Trains a fresh autoencoder on `x` by mini-batch gradient descent with
/// momentum.
pub fn sae_pretrain(
    x: &Array2<f64>,
    dims: &[usize],
    params: &PretrainParams,
    seed: u64,
) -> Result<(SaeModel, PretrainReport), ClusterError> {
    let model = SaeModel::new(dims, seed)?;
    sae_train(model, x, params)
}

/// Continues training `model` on `x`.
pub fn sae_train(
    mut model: SaeModel,
    x: &Array2<f64>,
    params: &PretrainParams,
) -> Result<(SaeModel, PretrainReport), ClusterError> {
    params.validate()?;
    if x.ncols() != model.encoder.input_dim() {
        return Err(ClusterError::DimMismatch {
            expected: model.encoder.input_dim(),
            got: x.ncols(),
        });
    }
    let n = x.nrows();
    if n < params.batch_size {
        return Err(ClusterError::Params(format!(
            "{n} samples is fewer than the batch size {}",
            params.batch_size
        )));
    }
    // separate stream so the shuffle does not depend on the architecture
    let mut rng = ChaCha8Rng::seed_from_u64(model.seed ^ 0x5ae5_ae5a_e5ae_5ae5);
    let mut v_enc = model.encoder.zeros_like();
    let mut v_dec = model.decoder.zeros_like();
    let mut order: Vec<usize> = (0..n).collect();
    let mut epoch_losses = Vec::with_capacity(params.epochs);
    for epoch in 0..params.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(params.batch_size) {
            let xb = x.select(Axis(0), batch);
            let (loss, g) = reconstruction_gradients(&model, &xb)?;
            if !loss.is_finite() {
                return Err(diverged(epoch, loss, params.learning_rate));
            }
            momentum_step(&mut model.encoder, &mut v_enc, &g.encoder, params);
            momentum_step(&mut model.decoder, &mut v_dec, &g.decoder, params);
        }
        let loss = reconstruction_loss(&model, x)?;
        if !loss.is_finite() || !model.encoder.is_finite() || !model.decoder.is_finite() {
            return Err(diverged(epoch, loss, params.learning_rate));
        }
        log::debug!("pretrain epoch {epoch}: loss {loss:.6}");
        epoch_losses.push(loss);
    }
    let final_loss = match epoch_losses.last() {
        Some(&l) => l,
        None => reconstruction_loss(&model, x)?,
    };
    Ok((
        model,
        PretrainReport {
            epoch_losses,
            final_loss,
        },
    ))
}

fn momentum_step(net: &mut Mlp, velocity: &mut [Dense], grads: &[Dense], p: &PretrainParams) {
    for (v, g) in velocity.iter_mut().zip(grads) {
        v.weight *= p.momentum;
        v.bias *= p.momentum;
        v.scaled_add(-p.learning_rate, g);
    }
    net.scaled_add(1.0, velocity);
}

fn diverged(epoch: usize, loss: f64, lr: f64) -> ClusterError {
    ClusterError::Diverged {
        stage: "pretraining",
        iteration: epoch,
        detail: format!(
            "reconstruction loss became {loss} at learning rate {lr}; \
             try a learning rate 10x smaller or standardize the input"
        ),
        checkpoint: None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn zero_model_encodes_to_zero() {
        let enc = Mlp {
            layers: vec![Dense::zeros(3, 4), Dense::zeros(4, 2)],
        };
        let z = encode_latent(&enc, &array![[1.0, 2.0, 3.0], [-1.0, 0.5, 2.0]]).unwrap();
        assert_eq!(z, Array2::<f64>::zeros((2, 2)));
    }

    #[test]
    fn identity_layer() {
        let enc = Mlp {
            layers: vec![Dense {
                weight: Array2::eye(3),
                bias: Array1::zeros(3),
            }],
        };
        let x = array![[1.0, -2.0, 3.0]];
        assert_eq!(encode_latent(&enc, &x).unwrap(), x);
        assert!(matches!(
            encode_latent(&enc, &array![[1.0, 2.0]]),
            Err(ClusterError::DimMismatch { expected: 3, got: 2 })
        ));
    }

    #[test]
    fn matches_layer_by_layer_loops() {
        let model = SaeModel::new(&[4, 5, 3], 7).unwrap();
        let x = array![[0.3, -1.0, 2.0, 0.1], [1.5, 0.0, -0.2, 0.7]];
        let z = model.encode(&x).unwrap();
        for r in 0..2 {
            let mut h: Vec<f64> = x.row(r).to_vec();
            for (l, layer) in model.encoder.layers.iter().enumerate() {
                let mut out = vec![0.0; layer.output_dim()];
                for (o, slot) in out.iter_mut().enumerate() {
                    let mut s = layer.bias[o];
                    for (i, hi) in h.iter().enumerate() {
                        s += hi * layer.weight[[i, o]];
                    }
                    *slot = if l == 0 { s.max(0.0) } else { s };
                }
                h = out;
            }
            for (c, v) in h.iter().enumerate() {
                assert!((z[[r, c]] - v).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn decoder_mirrors_encoder() {
        let m = SaeModel::new(&[10, 8, 3], 1).unwrap();
        assert_eq!(m.dims(), vec![10, 8, 3]);
        assert_eq!(m.decoder.dims(), vec![3, 8, 10]);
        assert!(SaeModel::new(&[4], 1).is_err());
    }

    #[test]
    fn learns_identity_on_standard_basis() {
        let x = Array2::<f64>::eye(4);
        let params = PretrainParams {
            epochs: 2000,
            batch_size: 4,
            learning_rate: 0.05,
            momentum: 0.9,
        };
        let (_, report) = sae_pretrain(&x, &[4, 4], &params, 3).unwrap();
        assert!(report.final_loss < 1e-3, "loss {}", report.final_loss);
    }

    #[test]
    fn one_epoch_is_deterministic() {
        let x = Array2::from_shape_fn((12, 5), |(i, j)| ((i * 7 + j * 3) % 11) as f64 / 11.0);
        let params = PretrainParams {
            epochs: 1,
            batch_size: 4,
            ..PretrainParams::default()
        };
        let (a, _) = sae_pretrain(&x, &[5, 4, 2], &params, 9).unwrap();
        let (b, _) = sae_pretrain(&x, &[5, 4, 2], &params, 9).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn batch_larger_than_data_rejected() {
        let x = Array2::<f64>::eye(3);
        let params = PretrainParams {
            batch_size: 8,
            ..PretrainParams::default()
        };
        assert!(matches!(sae_pretrain(&x, &[3, 2], &params, 0), Err(ClusterError::Params(_))));
    }

    #[test]
    fn huge_learning_rate_diverges_with_guidance() {
        let x = Array2::from_shape_fn((8, 3), |(i, j)| (i + j) as f64 * 10.0);
        let params = PretrainParams {
            epochs: 50,
            batch_size: 8,
            learning_rate: 10.0,
            momentum: 0.9,
        };
        match sae_pretrain(&x, &[3, 3, 2], &params, 0) {
            Err(ClusterError::Diverged { detail, .. }) => assert!(detail.contains("learning rate")),
            other => panic!("expected divergence, got {other:?}"),
        }
    }
}

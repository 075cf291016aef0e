use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::backward::gradient;
use super::forward::forward;
use super::{bce_loss, TadamError, TadamInput, TadamModel};
use crate::eval::{ranked_labels, Candidate, RankedCandidates};

/// Matching score in `(0, 1)`.
pub fn score(model: &TadamModel, input: &TadamInput) -> Result<f64, TadamError> {
    Ok(forward(model, input)?.score)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TensorCheck {
    pub name: String,
    pub entries: usize,
    pub max_rel_err: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub eps: f64,
    pub loss: f64,
    pub tensors: Vec<TensorCheck>,
    pub max_rel_err: f64,
}

/// Below this magnitude both gradients count as zero.
const REL_FLOOR: f64 = 1e-6;

/// Compares the analytic gradient with central differences, entry by entry,
/// over every tensor.
pub fn grad_check(model: &TadamModel, input: &TadamInput, y: f64, eps: f64) -> Result<GradCheckReport, TadamError> {
    let (grads, loss) = gradient(model, input, y)?;
    let mut probe = model.clone();
    let mut tensors = Vec::new();
    let names: Vec<&'static str> = model.tensors().iter().map(|(n, _)| *n).collect();
    for (ti, name) in names.into_iter().enumerate() {
        let analytic: Vec<f64> = grads.tensors()[ti].1.iter().copied().collect();
        let mut worst: f64 = 0.0;
        for (j, &a) in analytic.iter().enumerate() {
            let original = entry(&mut probe, ti, j, None);
            entry(&mut probe, ti, j, Some(original + eps));
            let plus = bce_loss(forward(&probe, input)?.score, y);
            entry(&mut probe, ti, j, Some(original - eps));
            let minus = bce_loss(forward(&probe, input)?.score, y);
            entry(&mut probe, ti, j, Some(original));
            let numeric = (plus - minus) / (2.0 * eps);
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_FLOOR);
            worst = worst.max(err);
        }
        tensors.push(TensorCheck {
            name: name.to_string(),
            entries: analytic.len(),
            max_rel_err: worst,
        });
    }
    let max_rel_err = tensors.iter().map(|t| t.max_rel_err).fold(0.0, f64::max);
    Ok(GradCheckReport {
        eps,
        loss,
        tensors,
        max_rel_err,
    })
}

/// Reads (and optionally overwrites) entry `j` of tensor `ti`.
fn entry(model: &mut TadamModel, ti: usize, j: usize, set: Option<f64>) -> f64 {
    let mut tensors = model.tensors_mut();
    let slot = tensors[ti].1.iter_mut().nth(j).expect("index within tensor");
    let old = *slot;
    if let Some(v) = set {
        *slot = v;
    }
    old
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub model: TadamModel,
    /// Mean loss per epoch, accumulated while training.
    pub curve: Vec<f64>,
}

/// Per-instance gradient descent with a seeded visiting order.
pub fn demo_train(
    data: &[(TadamInput, f64)],
    mut model: TadamModel,
    epochs: usize,
    lr: f64,
    seed: u64,
) -> Result<TrainReport, TadamError> {
    if data.is_empty() {
        return Err(TadamError::Input("empty training set".into()));
    }
    if !(lr.is_finite() && lr >= 0.0) {
        return Err(TadamError::Params(format!("learning rate must be finite and non-negative, got {lr}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut curve = Vec::with_capacity(epochs);
    for epoch in 0..epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for &i in &order {
            let (input, y) = &data[i];
            let (grads, loss) = match gradient(&model, input, *y) {
                Ok(g) => g,
                Err(TadamError::NonFiniteGradient { .. }) => {
                    return Err(TadamError::Diverged {
                        epoch,
                        loss: f64::NAN,
                        curve,
                    })
                }
                Err(e) => return Err(e),
            };
            total += loss;
            if lr > 0.0 {
                model.scaled_add(-lr, &grads);
            }
        }
        let mean = total / data.len() as f64;
        if !mean.is_finite() || !model.is_finite() {
            return Err(TadamError::Diverged { epoch, loss: mean, curve });
        }
        log::debug!("epoch {epoch}: mean loss {mean:.6}");
        curve.push(mean);
    }
    Ok(TrainReport { model, curve })
}

/// Fraction of contexts whose top-scored candidate is relevant; ties keep
/// input order and contexts without a relevant candidate are skipped.
pub fn precision_at_1(model: &TadamModel, contexts: &[Vec<(TadamInput, f64)>]) -> Result<f64, TadamError> {
    let mut hits = 0usize;
    let mut counted = 0usize;
    for (c, cands) in contexts.iter().enumerate() {
        let ranked = RankedCandidates {
            context_id: c.to_string(),
            candidates: cands
                .iter()
                .enumerate()
                .map(|(j, (input, y))| {
                    Ok(Candidate {
                        id: j.to_string(),
                        score: score(model, input)?,
                        label: u8::from(*y > 0.5),
                    })
                })
                .collect::<Result<_, TadamError>>()?,
        };
        let labels = ranked_labels(&ranked);
        if labels.iter().any(|&l| l) {
            counted += 1;
            hits += usize::from(labels[0]);
        }
    }
    Ok(if counted == 0 { 0.0 } else { hits as f64 / counted as f64 })
}

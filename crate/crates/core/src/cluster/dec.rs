use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::kmeans::sq_dist;
use super::{ClusterError, ClusterModel, Dense, SelfTrainParams};

/// Student's t soft assignment of every row of `z` to every centroid.
pub fn soft_assign(z: &Array2<f64>, centroids: &Array2<f64>, alpha: f64) -> Array2<f64> {
    let power = -(alpha + 1.0) / 2.0;
    let mut q = Array2::zeros((z.nrows(), centroids.nrows()));
    for (mut row, zi) in q.rows_mut().into_iter().zip(z.rows()) {
        for (slot, mu) in row.iter_mut().zip(centroids.rows()) {
            *slot = (1.0 + sq_dist(zi, mu) / alpha).powf(power);
        }
        let total = row.sum();
        row /= total;
    }
    q
}

/// Sharpened target distribution: `q²` divided by cluster frequency, row
/// normalized. A cluster with zero total mass contributes nothing.
pub fn target_dist(q: &Array2<f64>) -> Array2<f64> {
    let f = q.sum_axis(Axis(0));
    let mut p = q.clone();
    for mut row in p.rows_mut() {
        for (x, &fj) in row.iter_mut().zip(f.iter()) {
            *x = if fj > 0.0 { *x * *x / fj } else { 0.0 };
        }
        let total = row.sum();
        if total > 0.0 {
            row /= total;
        }
    }
    p
}

/// `Σ_ij p_ij ln(p_ij / q_ij)`, with `0 · ln 0 = 0`.
pub fn kl_divergence(p: &Array2<f64>, q: &Array2<f64>) -> f64 {
    p.iter()
        .zip(q.iter())
        .filter(|(&pij, _)| pij > 0.0)
        .map(|(&pij, &qij)| pij * (pij / qij).ln())
        .sum()
}

/// Hard assignment: the column of the largest entry per row (lowest index on ties).
pub fn argmax_rows(q: &Array2<f64>) -> Vec<usize> {
    q.rows()
        .into_iter()
        .map(|row| {
            row.iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (j, &v)| if v > best.1 { (j, v) } else { best })
                .0
        })
        .collect()
}

/// KL value and its gradients with `p` held fixed.
#[derive(Debug, Clone, PartialEq)]
pub struct KlGradients {
    pub q: Array2<f64>,
    pub kl: f64,
    /// `∂KL/∂z`, one row per point.
    pub dz: Array2<f64>,
    /// `∂KL/∂μ`, one row per centroid.
    pub dmu: Array2<f64>,
}

pub fn kl_gradients(z: &Array2<f64>, centroids: &Array2<f64>, p: &Array2<f64>, alpha: f64) -> KlGradients {
    let q = soft_assign(z, centroids, alpha);
    let kl = kl_divergence(p, &q);
    let c = (alpha + 1.0) / alpha;
    let mut dz = Array2::zeros(z.raw_dim());
    let mut dmu = Array2::zeros(centroids.raw_dim());
    for (i, zi) in z.rows().into_iter().enumerate() {
        for (j, mu) in centroids.rows().into_iter().enumerate() {
            let w = c * (p[[i, j]] - q[[i, j]]) / (1.0 + sq_dist(zi, mu) / alpha);
            let diff = &zi - &mu;
            dz.row_mut(i).scaled_add(w, &diff);
            dmu.row_mut(j).scaled_add(-w, &diff);
        }
    }
    KlGradients { q, kl, dz, dmu }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct SelfTrainHistory {
    /// KL(P‖Q) divided by the batch size, evaluated before each step.
    pub kl: Vec<f64>,
    /// Iterations at which P and the hard assignments were refreshed.
    pub refresh_iters: Vec<usize>,
    /// Number of assignments that changed at each refresh.
    pub changed: Vec<usize>,
    pub converged: bool,
}

impl SelfTrainHistory {
    /// KL values grouped by the target distribution they were measured against.
    pub fn kl_segments(&self) -> Vec<&[f64]> {
        let mut out = Vec::new();
        let mut start = 0;
        for &r in &self.refresh_iters {
            let end = r.min(self.kl.len());
            out.push(&self.kl[start..end]);
            start = end;
        }
        out.push(&self.kl[start..]);
        out.retain(|s| !s.is_empty());
        out
    }
}

/// Refines the encoder and centroids by minimizing KL(P‖Q).
///
/// `P` is recomputed from the current `Q` every `update_interval` steps,
/// at which point hard assignments are compared with the previous ones;
/// training stops when none changed or after `iter_max` steps.
pub fn self_train(
    mut model: ClusterModel,
    x: &Array2<f64>,
    params: &SelfTrainParams,
) -> Result<(ClusterModel, Vec<usize>, SelfTrainHistory), ClusterError> {
    params.validate()?;
    let n = x.nrows();
    let z = model.encode(x)?;
    let q = soft_assign(&z, &model.centroids, model.alpha);
    let mut p = target_dist(&q);
    let mut labels = argmax_rows(&q);
    let mut history = SelfTrainHistory::default();
    let mut checkpoint = model.clone();

    let batch = params.effective_batch(n);
    let mut rng = ChaCha8Rng::seed_from_u64(model.seed ^ 0xdec0_dec0_dec0_dec0);
    let mut order: Vec<usize> = (0..n).collect();
    let mut cursor = n;

    for iter in 1..=params.iter_max {
        let rows: Vec<usize> = if batch >= n {
            order.clone()
        } else {
            if cursor + batch > n {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            cursor += batch;
            order[cursor - batch..cursor].to_vec()
        };
        let kl = step(&mut model, x, &p, &rows, params)?;
        history.kl.push(kl);
        if !kl.is_finite() || !model.encoder.is_finite() || !model.centroids.iter().all(|v| v.is_finite()) {
            return Err(ClusterError::Diverged {
                stage: "self-training",
                iteration: iter,
                detail: format!("KL became {kl} at learning rate {}", params.learning_rate),
                checkpoint: Some(Box::new(checkpoint)),
            });
        }
        if iter % params.update_interval == 0 {
            let q = soft_assign(&model.encode(x)?, &model.centroids, model.alpha);
            p = target_dist(&q);
            let fresh = argmax_rows(&q);
            let changed = fresh.iter().zip(&labels).filter(|(a, b)| a != b).count();
            labels = fresh;
            history.refresh_iters.push(iter);
            history.changed.push(changed);
            checkpoint = model.clone();
            log::debug!("self-train iter {iter}: KL {kl:.6}, {changed} assignments changed");
            if changed == 0 {
                history.converged = true;
                break;
            }
        }
    }
    let q = soft_assign(&model.encode(x)?, &model.centroids, model.alpha);
    Ok((model, argmax_rows(&q), history))
}

/// Gradients of `KL(P‖Q) / n` over all `n` rows of `x`, with `p` fixed.
#[derive(Debug, Clone, PartialEq)]
pub struct SelfTrainGrads {
    pub loss: f64,
    pub encoder: Vec<Dense>,
    pub centroids: Array2<f64>,
}

pub fn self_train_gradients(model: &ClusterModel, x: &Array2<f64>, p: &Array2<f64>) -> Result<SelfTrainGrads, ClusterError> {
    if x.ncols() != model.encoder.input_dim() {
        return Err(ClusterError::DimMismatch {
            expected: model.encoder.input_dim(),
            got: x.ncols(),
        });
    }
    if p.dim() != (x.nrows(), model.m()) {
        return Err(ClusterError::Params(format!(
            "target has shape {:?}, expected ({}, {})",
            p.dim(),
            x.nrows(),
            model.m()
        )));
    }
    let acts = model.encoder.forward_cached(x);
    let g = kl_gradients(acts.last().unwrap(), &model.centroids, p, model.alpha);
    let scale = 1.0 / x.nrows() as f64;
    let (encoder, _) = model.encoder.backward(&acts, g.dz * scale);
    Ok(SelfTrainGrads {
        loss: g.kl * scale,
        encoder,
        centroids: g.dmu * scale,
    })
}

/// One gradient step on `KL / |rows|` over the selected rows.
fn step(
    model: &mut ClusterModel,
    x: &Array2<f64>,
    p: &Array2<f64>,
    rows: &[usize],
    params: &SelfTrainParams,
) -> Result<f64, ClusterError> {
    let g = self_train_gradients(model, &x.select(Axis(0), rows), &p.select(Axis(0), rows))?;
    model.encoder.scaled_add(-params.learning_rate, &g.encoder);
    if !params.freeze_centroids {
        model.centroids.scaled_add(-params.learning_rate, &g.centroids);
    }
    Ok(g.loss)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    #[test]
    fn hand_case_two_thirds() {
        let z = array![[0.0, 0.0]];
        let mu = array![[0.0, 0.0], [1.0, 0.0]];
        let q = soft_assign(&z, &mu, 1.0);
        assert!((q[[0, 0]] - 2.0 / 3.0).abs() < 1e-12);
        assert!((q[[0, 1]] - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn equidistant_is_uniform() {
        let z = array![[0.0, 0.0]];
        let mu = array![[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]];
        let q = soft_assign(&z, &mu, 1.0);
        assert!(q.iter().all(|v| (v - 0.25).abs() < 1e-15));
    }

    #[test]
    fn target_examples() {
        let uniform = Array2::from_elem((3, 4), 0.25);
        assert!(target_dist(&uniform).iter().all(|v| (v - 0.25).abs() < 1e-15));

        let single = array![[0.7, 0.2, 0.1]];
        let p = target_dist(&single);
        for (a, b) in p.iter().zip(single.iter()) {
            assert!((a - b).abs() < 1e-12);
        }

        // f = (1.4, 0.6)
        let q = array![[0.9, 0.1], [0.5, 0.5]];
        let p = target_dist(&q);
        let r0 = [0.81 / 1.4, 0.01 / 0.6];
        let r1 = [0.25 / 1.4, 0.25 / 0.6];
        let s0 = r0[0] + r0[1];
        let s1 = r1[0] + r1[1];
        let expected = array![[r0[0] / s0, r0[1] / s0], [r1[0] / s1, r1[1] / s1]];
        for (a, b) in p.iter().zip(expected.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_column_contributes_nothing() {
        let q = array![[1.0, 0.0], [1.0, 0.0]];
        let p = target_dist(&q);
        assert_eq!(p, q);
    }

    #[test]
    fn kl_zero_iff_equal() {
        let q = array![[0.3, 0.7], [0.5, 0.5]];
        assert_eq!(kl_divergence(&q, &q), 0.0);
        let p = array![[0.4, 0.6], [0.5, 0.5]];
        assert!(kl_divergence(&p, &q) > 0.0);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let z = array![[0.1, -0.3, 0.8], [1.2, 0.4, -0.5], [-0.7, 0.9, 0.2], [0.3, 0.3, 0.3], [2.0, -1.0, 0.5]];
        let mu = array![[0.0, 0.1, 0.2], [1.0, -0.5, 0.4]];
        let p = target_dist(&soft_assign(&(&z * 1.3), &mu, 1.0));
        for alpha in [1.0, 2.5] {
            let g = kl_gradients(&z, &mu, &p, alpha);
            let eps = 1e-5;
            let f = |z: &Array2<f64>, mu: &Array2<f64>| kl_divergence(&p, &soft_assign(z, mu, alpha));
            for idx in 0..z.len() {
                let (i, j) = (idx / 3, idx % 3);
                let mut zp = z.clone();
                zp[[i, j]] += eps;
                let mut zm = z.clone();
                zm[[i, j]] -= eps;
                let fd = (f(&zp, &mu) - f(&zm, &mu)) / (2.0 * eps);
                assert!((fd - g.dz[[i, j]]).abs() <= 1e-6 + 1e-4 * fd.abs(), "dz[{i},{j}]");
            }
            for idx in 0..mu.len() {
                let (i, j) = (idx / 3, idx % 3);
                let mut mp = mu.clone();
                mp[[i, j]] += eps;
                let mut mm = mu.clone();
                mm[[i, j]] -= eps;
                let fd = (f(&z, &mp) - f(&z, &mm)) / (2.0 * eps);
                assert!((fd - g.dmu[[i, j]]).abs() <= 1e-6 + 1e-4 * fd.abs(), "dmu[{i},{j}]");
            }
        }
    }

    fn arb_matrix(rows: usize, cols: usize) -> impl Strategy<Value = Array2<f64>> {
        prop::collection::vec(-5.0f64..5.0, rows * cols)
            .prop_map(move |v| Array2::from_shape_vec((rows, cols), v).unwrap())
    }

    proptest! {
        #[test]
        fn rows_are_distributions(
            z in arb_matrix(7, 3),
            mu in arb_matrix(4, 3),
            alpha in 0.1f64..5.0,
        ) {
            let q = soft_assign(&z, &mu, alpha);
            let p = target_dist(&q);
            for m in [&q, &p] {
                for row in m.rows() {
                    prop_assert!((row.sum() - 1.0).abs() < 1e-12);
                    prop_assert!(row.iter().all(|v| (0.0..=1.0).contains(v)));
                }
            }
            prop_assert!(kl_divergence(&p, &q) >= -1e-12);
        }
    }
}

use ndarray::{s, Array1, Array2, Axis};

use super::forward::{AttentionOutput, TadamTrace};
use super::{Attentive, Gru, TadamError, TadamInput, TadamModel};

const SCORE_CLAMP: f64 = 1e-12;

/// Binary cross-entropy with the score clamped to `[1e-12, 1 − 1e-12]`.
pub fn bce_loss(score: f64, y: f64) -> f64 {
    let s = score.clamp(SCORE_CLAMP, 1.0 - SCORE_CLAMP);
    -(y * s.ln() + (1.0 - y) * (1.0 - s).ln())
}

fn outer(a: &Array1<f64>, b: &Array1<f64>) -> Array2<f64> {
    let a2 = a.view().insert_axis(Axis(1));
    let b2 = b.view().insert_axis(Axis(0));
    a2.dot(&b2)
}

/// Gradient of the loss with respect to the module parameters given the
/// gradient at its output; returns the gradients at `q` and at `k`
/// (keys and values combined).
fn attentive_backward(
    module: &Attentive,
    cache: &AttentionOutput,
    d_out: &Array2<f64>,
    grads: &mut Attentive,
) -> (Array2<f64>, Array2<f64>) {
    let d = cache.q.ncols();
    // FFN
    grads.ffn_w2 += &cache.hidden.t().dot(d_out);
    grads.ffn_b2 += &d_out.sum_axis(Axis(0));
    let mut d_hidden = d_out.dot(&module.ffn_w2.t());
    d_hidden.zip_mut_with(&cache.hidden, |g, &hv| {
        if hv <= 0.0 {
            *g = 0.0;
        }
    });
    grads.ffn_w1 += &cache.v_att_norm.t().dot(&d_hidden);
    grads.ffn_b1 += &d_hidden.sum_axis(Axis(0));
    let d_norm = d_hidden.dot(&module.ffn_w1.t());
    // layer norm
    grads.ln_gain += &(&d_norm * &cache.x_hat).sum_axis(Axis(0));
    grads.ln_bias += &d_norm.sum_axis(Axis(0));
    let dx_hat = &d_norm * &module.ln_gain;
    let mut d_vatt = Array2::zeros(dx_hat.raw_dim());
    for (r, mut out) in d_vatt.rows_mut().into_iter().enumerate() {
        let g = dx_hat.row(r);
        let xh = cache.x_hat.row(r);
        let mean_g = g.mean().unwrap_or(0.0);
        let mean_gx = g.dot(&xh) / d as f64;
        out.assign(&((&g - mean_g - &xh * mean_gx) * cache.inv_std[r]));
    }
    // attention, values equal keys
    let nk = cache.k.nrows();
    if nk == 0 {
        return (Array2::zeros(cache.q.raw_dim()), Array2::zeros((0, d)));
    }
    let mut dk = cache.probs.t().dot(&d_vatt);
    let d_probs = d_vatt.dot(&cache.k.t());
    let mut d_scores = Array2::zeros(d_probs.raw_dim());
    for (r, mut out) in d_scores.rows_mut().into_iter().enumerate() {
        let p = cache.probs.row(r);
        let dp = d_probs.row(r);
        let dot = p.dot(&dp);
        out.assign(&(&p * &(&dp - dot)));
    }
    let scale = 1.0 / (d as f64).sqrt();
    let dq = d_scores.dot(&cache.k) * scale;
    dk += &(d_scores.t().dot(&cache.q) * scale);
    (dq, dk)
}

fn gru_backward(gru: &Gru, steps: &[super::forward::GruStep], d_h_last: Array1<f64>, grads: &mut Gru) -> Vec<Array1<f64>> {
    let mut dh = d_h_last;
    let mut dxs = vec![Array1::zeros(0); steps.len()];
    for (idx, st) in steps.iter().enumerate().rev() {
        let dz = &dh * &(&st.h_prev - &st.n);
        let dn = &dh * &(1.0 - &st.z);
        let mut dh_prev = &dh * &st.z;

        let dn_pre = &dn * &(1.0 - &st.n * &st.n);
        let rh = &st.r * &st.h_prev;
        grads.w_n += &outer(&st.x, &dn_pre);
        grads.u_n += &outer(&rh, &dn_pre);
        grads.b_n += &dn_pre;
        let d_rh = gru.u_n.dot(&dn_pre);
        let dr = &d_rh * &st.h_prev;
        dh_prev += &(&d_rh * &st.r);
        let mut dx = gru.w_n.dot(&dn_pre);

        let dz_pre = &dz * &(&st.z * &(1.0 - &st.z));
        grads.w_z += &outer(&st.x, &dz_pre);
        grads.u_z += &outer(&st.h_prev, &dz_pre);
        grads.b_z += &dz_pre;
        dx += &gru.w_z.dot(&dz_pre);
        dh_prev += &gru.u_z.dot(&dz_pre);

        let dr_pre = &dr * &(&st.r * &(1.0 - &st.r));
        grads.w_r += &outer(&st.x, &dr_pre);
        grads.u_r += &outer(&st.h_prev, &dr_pre);
        grads.b_r += &dr_pre;
        dx += &gru.w_r.dot(&dr_pre);
        dh_prev += &gru.u_r.dot(&dr_pre);

        dxs[idx] = dx;
        dh = dh_prev;
    }
    dxs
}

/// Gradients of `bce_loss(score, y)` for every trainable tensor, plus the
/// loss itself.
pub fn gradient(model: &TadamModel, input: &TadamInput, y: f64) -> Result<(TadamModel, f64), TadamError> {
    let trace = super::forward(model, input)?;
    let g = backward(model, input, &trace, y);
    for (name, t) in g.tensors() {
        if t.iter().any(|v| !v.is_finite()) {
            return Err(TadamError::NonFiniteGradient { tensor: name.to_string() });
        }
    }
    Ok((g, bce_loss(trace.score, y)))
}

pub(crate) fn backward(model: &TadamModel, input: &TadamInput, trace: &TadamTrace, y: f64) -> TadamModel {
    let p = &model.params;
    let (l, d) = (p.l, p.d);
    let cache = &trace.cache;
    let mut g = model.zeros_like();

    // sigmoid + BCE
    let d_logit = trace.score - y;
    g.b4 = d_logit;
    g.w4.slice_mut(s![..2 * d]).assign(&(&trace.h_hat * d_logit));
    g.w4.slice_mut(s![2 * d..]).assign(&(&trace.c3_t_hat * d_logit));
    let d_h = model.w4.slice(s![..2 * d]).to_owned() * d_logit;
    let d_c3t_hat = model.w4.slice(s![2 * d..]).to_owned() * d_logit;

    // last-segment projection
    g.w3 = outer(&d_c3t_hat, &trace.c3_t);
    g.b3 = d_c3t_hat.clone();
    let mut d_c3 = Array2::<f64>::zeros(trace.c3.raw_dim());
    d_c3.row_mut(trace.last).scaled_add(1.0, &model.w3.t().dot(&d_c3t_hat));

    // GRU over present rows
    let dxs = gru_backward(&model.gru, &cache.gru_steps, d_h, &mut g.gru);
    for (&i, dx) in cache.present.iter().zip(&dxs) {
        d_c3.row_mut(i).scaled_add(1.0, dx);
    }

    // dual attention back to the segment weights s
    let mut d_s = Array1::<f64>::zeros(p.t);
    for (pi, &i) in cache.present.iter().enumerate() {
        let ys = &cache.seg_tokens[pi];
        let (ny, nu) = (ys.len(), cache.resp_tokens.len());
        let d_out1 = Array2::from_shape_fn((ny, d), |(_, c)| d_c3[[i, c]] / ny as f64);
        let d_out2 = Array2::from_shape_fn((nu, d), |(_, c)| d_c3[[i, d + c]] / nu as f64);
        let (dq1, _) = attentive_backward(&model.a1, &cache.attn1[pi], &d_out1, &mut g.a1);
        let (_, dk2) = attentive_backward(&model.a2, &cache.attn2[pi], &d_out2, &mut g.a2);
        let d_seg = dq1 + dk2;
        let c_valid = input.c1.index_axis(Axis(0), i).select(Axis(0), ys);
        d_s[i] = (&d_seg * &c_valid).sum();
    }

    // combination: only the word-level weights depend on parameters
    let d_ww = d_s * p.beta;
    let present = &cache.present;
    let dot: f64 = present.iter().map(|&i| trace.w_w[i] * d_ww[i]).sum();
    let scale = 1.0 / (d as f64).sqrt();
    let r_valid = input.r1.select(Axis(0), &cache.resp_tokens);
    for (pi, &i) in present.iter().enumerate() {
        let d_logit_i = trace.w_w[i] * (d_ww[i] - dot);
        g.b[i] += d_logit_i;
        g.w_prime.scaled_add(d_logit_i, &trace.m_pool.row(i));
        let d_pool = &model.w_prime * d_logit_i;

        let ys = &cache.seg_tokens[pi];
        let tanh = &cache.tanh[pi];
        let (ny, nu, h) = tanh.dim();
        let mut d_m = Array2::<f64>::zeros((ny, nu));
        for (b, &u) in cache.resp_tokens.iter().enumerate() {
            d_m[[cache.argmax_y[pi][b], b]] += d_pool[u];
        }
        for (a, &y) in ys.iter().enumerate() {
            d_m[[a, cache.argmax_u[pi][a]]] += d_pool[l + y];
        }
        let c_valid = input.c1.index_axis(Axis(0), i).select(Axis(0), ys);
        for v in 0..h {
            let t_v = tanh.index_axis(Axis(2), v);
            g.v1[v] += (&d_m * &t_v).sum() * scale;
            let d_pre = &d_m * &t_v.mapv(|t| 1.0 - t * t) * (model.v1[v] * scale);
            // Σ_{y,u} d_pre[y,u] C[y,k] r[u,l]
            let gw = c_valid.t().dot(&d_pre).dot(&r_valid);
            let mut slab = g.w1.index_axis_mut(Axis(2), v);
            if model.bilinear {
                slab += &gw;
            } else {
                for k in 0..d {
                    slab[[k, k]] += gw[[k, k]];
                }
            }
        }
    }
    g
}

use ndarray::{s, Array1, Array2, Array3, ArrayView1, Axis};
use serde::Serialize;

use super::{Attentive, Gru, TadamError, TadamInput, TadamModel};

pub(crate) const LN_EPS: f64 = 1e-6;

/// Every intermediate of one forward pass. Pad positions hold zeros.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TadamTrace {
    /// `T × L × d`.
    pub c1: Array3<f64>,
    /// `L × d`.
    pub r1: Array2<f64>,
    /// Word-level matching map, `T × L × L` (segment token, response token).
    pub m: Array3<f64>,
    /// `T × 2L`: the max over segment tokens (one entry per response token)
    /// followed by the max over response tokens (one per segment token).
    pub m_pool: Array2<f64>,
    pub w_w: Array1<f64>,
    /// Mean token vector per segment, `T × d`.
    pub c_prime: Array2<f64>,
    pub w_s: Array1<f64>,
    pub s: Array1<f64>,
    pub c2: Array3<f64>,
    pub s_tilde: Array3<f64>,
    pub r_tilde: Array3<f64>,
    /// `T × 2d`.
    pub c3: Array2<f64>,
    /// Segments whose `C3` row is the attentive modules' sentinel output.
    pub sentinel: Vec<bool>,
    pub h_hat: Array1<f64>,
    /// Index of the last non-pad segment.
    pub last: usize,
    pub c3_t: Array1<f64>,
    pub c3_t_hat: Array1<f64>,
    pub logit: f64,
    pub score: f64,
    #[serde(skip)]
    pub(crate) cache: Cache,
}

impl TadamTrace {
    /// Attention weights of both modules for every present segment, segment
    /// attending to response first.
    pub fn attention_maps(&self) -> impl Iterator<Item = &Array2<f64>> {
        self.cache.attn1.iter().chain(&self.cache.attn2).map(|a| &a.probs)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub(crate) struct Cache {
    pub present: Vec<usize>,
    pub seg_tokens: Vec<Vec<usize>>,
    pub resp_tokens: Vec<usize>,
    /// Per present segment: `tanh` of the matching pre-activations, `ny × nu × h`.
    pub tanh: Vec<Array3<f64>>,
    /// Per present segment: argmax segment token for each response token,
    /// and argmax response token for each segment token (positions within
    /// the valid-token lists).
    pub argmax_y: Vec<Vec<usize>>,
    pub argmax_u: Vec<Vec<usize>>,
    pub attn1: Vec<AttentionOutput>,
    pub attn2: Vec<AttentionOutput>,
    pub gru_steps: Vec<GruStep>,
}

/// Attentive module result with what its backward pass needs.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionOutput {
    pub q: Array2<f64>,
    pub k: Array2<f64>,
    /// Attention weights, `n_q × n_k`; each row sums to 1.
    pub probs: Array2<f64>,
    pub v_att: Array2<f64>,
    pub(crate) x_hat: Array2<f64>,
    pub(crate) inv_std: Array1<f64>,
    /// Layer-norm output.
    pub v_att_norm: Array2<f64>,
    pub(crate) hidden: Array2<f64>,
    pub out: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct GruStep {
    pub x: Array1<f64>,
    pub h_prev: Array1<f64>,
    pub z: Array1<f64>,
    pub r: Array1<f64>,
    pub n: Array1<f64>,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn layer_norm(x: &Array2<f64>, gain: &Array1<f64>, bias: &Array1<f64>) -> (Array2<f64>, Array2<f64>, Array1<f64>) {
    let d = x.ncols() as f64;
    let mut x_hat = x.clone();
    let mut inv = Array1::zeros(x.nrows());
    for (mut row, slot) in x_hat.rows_mut().into_iter().zip(inv.iter_mut()) {
        let mean = row.sum() / d;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d;
        *slot = 1.0 / (var + LN_EPS).sqrt();
        row.mapv_inplace(|v| (v - mean) * *slot);
    }
    let y = &x_hat * gain + bias;
    (y, x_hat, inv)
}

/// `FFN(LayerNorm(softmax(Q Kᵀ / √d) K))` with values equal to keys.
///
/// Rows of `q` and `k` are the unmasked positions only. With no keys the
/// attended value is the zero vector, so every output row equals the
/// module's sentinel `FFN(LayerNorm(0))`.
pub fn attentive_module(module: &Attentive, q: &Array2<f64>, k: &Array2<f64>) -> AttentionOutput {
    let d = q.ncols();
    let (nq, nk) = (q.nrows(), k.nrows());
    let mut probs = Array2::zeros((nq, nk));
    if nk > 0 {
        let scores = q.dot(&k.t()) / (d as f64).sqrt();
        for (mut prow, srow) in probs.rows_mut().into_iter().zip(scores.rows()) {
            let max = srow.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            prow.assign(&srow.mapv(|v| (v - max).exp()));
            let total = prow.sum();
            prow /= total;
        }
    }
    let v_att = if nk > 0 { probs.dot(k) } else { Array2::zeros((nq, d)) };
    let (v_att_norm, x_hat, inv_std) = layer_norm(&v_att, &module.ln_gain, &module.ln_bias);
    let hidden = (v_att_norm.dot(&module.ffn_w1) + &module.ffn_b1).mapv(|v| v.max(0.0));
    let out = hidden.dot(&module.ffn_w2) + &module.ffn_b2;
    AttentionOutput {
        q: q.clone(),
        k: k.clone(),
        probs,
        v_att,
        x_hat,
        inv_std,
        v_att_norm,
        hidden,
        out,
    }
}

fn sentinel(module: &Attentive) -> Array1<f64> {
    let d = module.ln_bias.len();
    let one = attentive_module(module, &Array2::zeros((1, d)), &Array2::zeros((0, d)));
    one.out.row(0).to_owned()
}

/// Masked mean token vector per segment and the cosine of each with the
/// response's mean vector; pad segments get zero.
pub fn segment_level_weights(input: &TadamInput) -> (Array2<f64>, Array1<f64>) {
    let (t, _, d) = input.c1.dim();
    let r_mean = masked_mean(&input.r1, input.r_mask.view());
    let mut c_prime = Array2::zeros((t, d));
    let mut w_s = Array1::zeros(t);
    for i in 0..t {
        let mask = input.seg_mask.row(i);
        if !mask.iter().any(|&m| m) {
            continue;
        }
        let mean = masked_mean(&input.c1.index_axis(Axis(0), i).to_owned(), mask);
        w_s[i] = cosine(&mean, &r_mean);
        c_prime.row_mut(i).assign(&mean);
    }
    (c_prime, w_s)
}

fn masked_mean(x: &Array2<f64>, mask: ArrayView1<bool>) -> Array1<f64> {
    let mut sum = Array1::zeros(x.ncols());
    let mut count = 0;
    for (row, &m) in x.rows().into_iter().zip(mask.iter()) {
        if m {
            sum += &row;
            count += 1;
        }
    }
    if count > 0 {
        sum /= count as f64;
    }
    sum
}

fn cosine(a: &Array1<f64>, b: &Array1<f64>) -> f64 {
    let na = a.dot(a).sqrt();
    let nb = b.dot(b).sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        (a.dot(b) / (na * nb)).clamp(-1.0, 1.0)
    }
}

/// `s = β w_w + (1 − β) w_s` and `C2[i] = s[i] · C1[i]`.
pub fn combine_and_weight(w_w: &Array1<f64>, w_s: &Array1<f64>, beta: f64, c1: &Array3<f64>) -> (Array1<f64>, Array3<f64>) {
    let s = w_w * beta + w_s * (1.0 - beta);
    let mut c2 = c1.clone();
    for (mut seg, &si) in c2.outer_iter_mut().zip(s.iter()) {
        seg *= si;
    }
    (s, c2)
}

pub(crate) fn gru_step(gru: &Gru, x: &Array1<f64>, h: &Array1<f64>) -> GruStep {
    let z = (x.dot(&gru.w_z) + h.dot(&gru.u_z) + &gru.b_z).mapv(sigmoid);
    let r = (x.dot(&gru.w_r) + h.dot(&gru.u_r) + &gru.b_r).mapv(sigmoid);
    let n = (x.dot(&gru.w_n) + (&r * h).dot(&gru.u_n) + &gru.b_n).mapv(f64::tanh);
    GruStep {
        x: x.clone(),
        h_prev: h.clone(),
        z,
        r,
        n,
    }
}

impl GruStep {
    pub(crate) fn output(&self) -> Array1<f64> {
        &self.z * &self.h_prev + &(1.0 - &self.z) * &self.n
    }
}

pub fn forward(model: &TadamModel, input: &TadamInput) -> Result<TadamTrace, TadamError> {
    input.check(&model.params)?;
    let p = &model.params;
    let (t, l, d) = (p.t, p.l, p.d);
    let scale = 1.0 / (d as f64).sqrt();

    let present: Vec<usize> = (0..t).filter(|&i| input.seg_mask.row(i).iter().any(|&m| m)).collect();
    let resp_tokens: Vec<usize> = (0..l).filter(|&u| input.r_mask[u]).collect();
    let seg_tokens: Vec<Vec<usize>> = present
        .iter()
        .map(|&i| (0..l).filter(|&y| input.seg_mask[[i, y]]).collect())
        .collect();
    let r_valid = input.r1.select(Axis(0), &resp_tokens);

    // word-level weighting
    let mut m = Array3::zeros((t, l, l));
    let mut m_pool = Array2::zeros((t, 2 * l));
    let mut cache = Cache {
        present: present.clone(),
        seg_tokens: seg_tokens.clone(),
        resp_tokens: resp_tokens.clone(),
        ..Cache::default()
    };
    for (pi, &i) in present.iter().enumerate() {
        let ys = &seg_tokens[pi];
        let c_valid = input.c1.index_axis(Axis(0), i).select(Axis(0), ys);
        let tanh = matching_tanh(model, &c_valid, &r_valid);
        let mi = contract_last(&tanh, &model.v1) * scale;
        let (ny, nu) = mi.dim();
        let mut argmax_y = vec![0; nu];
        let mut argmax_u = vec![0; ny];
        for u in 0..nu {
            let col = mi.column(u);
            argmax_y[u] = argmax(col);
            m_pool[[i, resp_tokens[u]]] = col[argmax_y[u]];
        }
        for y in 0..ny {
            let row = mi.row(y);
            argmax_u[y] = argmax(row);
            m_pool[[i, l + ys[y]]] = row[argmax_u[y]];
        }
        for (a, &y) in ys.iter().enumerate() {
            for (b, &u) in resp_tokens.iter().enumerate() {
                m[[i, y, u]] = mi[[a, b]];
            }
        }
        cache.tanh.push(tanh);
        cache.argmax_y.push(argmax_y);
        cache.argmax_u.push(argmax_u);
    }
    let mut w_w = Array1::zeros(t);
    let logits: Vec<f64> = present
        .iter()
        .map(|&i| m_pool.row(i).dot(&model.w_prime) + model.b[i])
        .collect();
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let total: f64 = logits.iter().map(|v| (v - max).exp()).sum();
    for (&i, &lg) in present.iter().zip(&logits) {
        w_w[i] = (lg - max).exp() / total;
    }

    // segment-level weighting and combination
    let (c_prime, w_s) = segment_level_weights(input);
    let (s, c2) = combine_and_weight(&w_w, &w_s, p.beta, &input.c1);

    // dual cross-attention
    let mut s_tilde = Array3::zeros((t, l, d));
    let mut r_tilde = Array3::zeros((t, l, d));
    let mut c3 = Array2::zeros((t, 2 * d));
    let mut is_sentinel = vec![true; t];
    let (sent1, sent2) = (sentinel(&model.a1), sentinel(&model.a2));
    for i in 0..t {
        c3.slice_mut(s![i, ..d]).assign(&sent1);
        c3.slice_mut(s![i, d..]).assign(&sent2);
    }
    for (pi, &i) in present.iter().enumerate() {
        let ys = &seg_tokens[pi];
        let seg = c2.index_axis(Axis(0), i).select(Axis(0), ys);
        let o1 = attentive_module(&model.a1, &seg, &r_valid);
        let o2 = attentive_module(&model.a2, &r_valid, &seg);
        for (a, &y) in ys.iter().enumerate() {
            s_tilde.slice_mut(s![i, y, ..]).assign(&o1.out.row(a));
        }
        for (b, &u) in resp_tokens.iter().enumerate() {
            r_tilde.slice_mut(s![i, u, ..]).assign(&o2.out.row(b));
        }
        c3.slice_mut(s![i, ..d]).assign(&o1.out.mean_axis(Axis(0)).unwrap());
        c3.slice_mut(s![i, d..]).assign(&o2.out.mean_axis(Axis(0)).unwrap());
        is_sentinel[i] = false;
        cache.attn1.push(o1);
        cache.attn2.push(o2);
    }

    // aggregation
    let mut h = Array1::zeros(2 * d);
    for &i in &present {
        let step = gru_step(&model.gru, &c3.row(i).to_owned(), &h);
        h = step.output();
        cache.gru_steps.push(step);
    }
    let last = *present.last().expect("checked: at least one segment");
    let c3_t = c3.row(last).to_owned();
    let c3_t_hat = model.w3.dot(&c3_t) + &model.b3;
    let logit = model.w4.slice(s![..2 * d]).dot(&h) + model.w4.slice(s![2 * d..]).dot(&c3_t_hat) + model.b4;
    let score = sigmoid(logit);

    Ok(TadamTrace {
        c1: input.c1.clone(),
        r1: input.r1.clone(),
        m,
        m_pool,
        w_w,
        c_prime,
        w_s,
        s,
        c2,
        s_tilde,
        r_tilde,
        c3,
        sentinel: is_sentinel,
        h_hat: h,
        last,
        c3_t,
        c3_t_hat,
        logit,
        score,
        cache,
    })
}

/// `tanh(Σ_k C[y,k] W1[k,k,v] r[u,k])` (or the full bilinear form), `ny × nu × h`.
pub(crate) fn matching_tanh(model: &TadamModel, c: &Array2<f64>, r: &Array2<f64>) -> Array3<f64> {
    let (ny, nu, h) = (c.nrows(), r.nrows(), model.params.h);
    let mut out = Array3::zeros((ny, nu, h));
    for v in 0..h {
        let w = model.w1.index_axis(Axis(2), v);
        let pre = if model.bilinear {
            c.dot(&w).dot(&r.t())
        } else {
            (c * &w.diag()).dot(&r.t())
        };
        out.index_axis_mut(Axis(2), v).assign(&pre.mapv(f64::tanh));
    }
    out
}

/// `out[a, b] = Σ_v x[a, b, v] w[v]`.
pub(crate) fn contract_last(x: &Array3<f64>, w: &Array1<f64>) -> Array2<f64> {
    let (a, b, _) = x.dim();
    Array2::from_shape_fn((a, b), |(i, j)| x.slice(s![i, j, ..]).dot(w))
}

fn argmax(v: ArrayView1<f64>) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

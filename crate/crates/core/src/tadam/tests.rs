use ndarray::{array, s, Array1, Array2, Array3, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::backward::backward;
use super::forward::{gru_step, layer_norm};
use super::*;

fn params(t: usize, l: usize, d: usize, h: usize) -> TadamParams {
    TadamParams {
        t,
        l,
        d,
        h,
        ..TadamParams::default()
    }
}

/// Random input with `present` leading segments, each holding at least one token.
fn random_input(p: &TadamParams, present: usize, seed: u64) -> TadamInput {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut c1 = Array3::zeros((p.t, p.l, p.d));
    let mut seg_mask = Array2::from_elem((p.t, p.l), false);
    for i in 0..present {
        let n = rng.random_range(1..=p.l);
        for y in 0..n {
            seg_mask[[i, y]] = true;
            for k in 0..p.d {
                c1[[i, y, k]] = rng.random_range(-1.0..1.0);
            }
        }
    }
    let n = rng.random_range(1..=p.l);
    let mut r1 = Array2::zeros((p.l, p.d));
    let mut r_mask = Array1::from_elem(p.l, false);
    for u in 0..n {
        r_mask[u] = true;
        for k in 0..p.d {
            r1[[u, k]] = rng.random_range(-1.0..1.0);
        }
    }
    TadamInput { c1, seg_mask, r1, r_mask }
}

/// Perturbs every parameter so that zero-initialized biases and gains do not
/// hide mistakes.
fn jitter(model: &mut TadamModel, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bilinear = model.bilinear;
    for (name, mut t) in model.tensors_mut() {
        if name == "W1" && !bilinear {
            continue;
        }
        t.mapv_inplace(|v| v + rng.random_range(-0.3..0.3));
    }
}

#[test]
fn singleton_context_gets_full_word_weight() {
    let p = params(1, 3, 4, 2);
    let m = TadamModel::new(p, false, 0).unwrap();
    let tr = forward(&m, &random_input(&p, 1, 1)).unwrap();
    assert_eq!(tr.w_w.to_vec(), vec![1.0]);
}

#[test]
fn trace_invariants_on_seeded_inputs() {
    let p = params(4, 5, 6, 3);
    for seed in 0..100u64 {
        let mut m = TadamModel::new(p, seed % 2 == 1, seed).unwrap();
        jitter(&mut m, seed);
        let present = 1 + (seed as usize % 4);
        let input = random_input(&p, present, 1000 + seed);
        let tr = forward(&m, &input).unwrap();
        assert!((tr.w_w.sum() - 1.0).abs() < 1e-9);
        assert!(tr.w_w.iter().all(|&w| w >= 0.0));
        assert!(tr.w_w.slice(s![present..]).iter().all(|&w| w == 0.0));
        for a in tr.cache.attn1.iter().chain(&tr.cache.attn2) {
            for row in a.probs.rows() {
                assert!(row.iter().all(|&v| v >= 0.0));
                assert!((row.sum() - 1.0).abs() < 1e-9);
            }
        }
        assert!(tr.score > 0.0 && tr.score < 1.0);
        assert_eq!(tr.last, present - 1);
        assert_eq!(tr.sentinel.iter().filter(|&&b| !b).count(), present);
    }
}

#[test]
fn matching_map_matches_triple_loop() {
    for bilinear in [false, true] {
        let p = params(1, 3, 4, 3);
        let mut m = TadamModel::new(p, bilinear, 5).unwrap();
        jitter(&mut m, 6);
        let mut input = random_input(&p, 1, 7);
        // 2 segment tokens × 3 response tokens
        input.seg_mask.fill(false);
        input.seg_mask[[0, 0]] = true;
        input.seg_mask[[0, 1]] = true;
        input.r_mask.fill(true);
        for k in 0..p.d {
            input.r1[[2, k]] = 0.1 * k as f64 - 0.2;
            input.c1[[0, 1, k]] = 0.3 - 0.05 * k as f64;
        }
        let tr = forward(&m, &input).unwrap();
        for y in 0..2 {
            for u in 0..3 {
                let mut total = 0.0;
                for v in 0..p.h {
                    let mut pre = 0.0;
                    for k in 0..p.d {
                        if bilinear {
                            for k2 in 0..p.d {
                                pre += input.c1[[0, y, k]] * m.w1[[k, k2, v]] * input.r1[[u, k2]];
                            }
                        } else {
                            pre += input.c1[[0, y, k]] * m.w1[[k, k, v]] * input.r1[[u, k]];
                        }
                    }
                    total += pre.tanh() * m.v1[v];
                }
                total /= (p.d as f64).sqrt();
                assert!((tr.m[[0, y, u]] - total).abs() < 1e-12, "bilinear={bilinear} y={y} u={u}");
            }
        }
        // pooled maxima over valid positions only
        for u in 0..3 {
            let best = tr.m[[0, 0, u]].max(tr.m[[0, 1, u]]);
            assert_eq!(tr.m_pool[[0, u]], best);
        }
        assert_eq!(tr.m_pool[[0, p.l + 2]], 0.0);
    }
}

#[test]
fn segment_cosine_cases() {
    let p = params(3, 2, 2, 1);
    let mut input = random_input(&p, 3, 1);
    input.seg_mask.fill(false);
    input.r_mask.fill(false);
    input.r1 = array![[1.0, 0.0], [0.0, 0.0]];
    input.r_mask[0] = true;
    input.c1.fill(0.0);
    // identical to the response
    input.c1.slice_mut(s![0, 0, ..]).assign(&array![1.0, 0.0]);
    input.seg_mask[[0, 0]] = true;
    // orthogonal mean
    input.c1.slice_mut(s![1, .., ..]).assign(&array![[0.0, 2.0], [0.0, 1.0]]);
    input.seg_mask[[1, 0]] = true;
    input.seg_mask[[1, 1]] = true;
    let (c_prime, w_s) = segment_level_weights(&input);
    assert_eq!(w_s.to_vec(), vec![1.0, 0.0, 0.0]);
    assert_eq!(c_prime.row(1).to_vec(), vec![0.0, 1.5]);

    // random fixture against a direct mean + cosine
    let p = params(4, 5, 3, 1);
    let input = random_input(&p, 3, 9);
    let (_, w_s) = segment_level_weights(&input);
    let mean = |rows: Vec<Vec<f64>>| -> Vec<f64> {
        let n = rows.len() as f64;
        (0..p.d).map(|k| rows.iter().map(|r| r[k]).sum::<f64>() / n).collect()
    };
    let r: Vec<Vec<f64>> = (0..p.l).filter(|&u| input.r_mask[u]).map(|u| input.r1.row(u).to_vec()).collect();
    let rm = mean(r);
    for i in 0..3 {
        let rows = (0..p.l)
            .filter(|&y| input.seg_mask[[i, y]])
            .map(|y| input.c1.slice(s![i, y, ..]).to_vec())
            .collect();
        let cm = mean(rows);
        let cos = crate::embed::cosine(&cm, &rm).unwrap();
        assert!((w_s[i] - cos).abs() < 1e-9);
    }
    assert_eq!(w_s[3], 0.0);
}

#[test]
fn combination_arithmetic() {
    let c1 = Array3::from_elem((2, 1, 1), 2.0);
    let (s, c2) = combine_and_weight(&array![0.6, 0.4], &array![0.2, 0.8], 0.5, &c1);
    assert!((s[0] - 0.4).abs() < 1e-15 && (s[1] - 0.6).abs() < 1e-15);
    assert!((c2[[1, 0, 0]] - 1.2).abs() < 1e-15);
}

#[test]
fn beta_extremes_are_exact() {
    for (beta, seed) in [(1.0, 1u64), (0.0, 2)] {
        let p = TadamParams {
            beta,
            ..params(3, 4, 5, 2)
        };
        let mut m = TadamModel::new(p, false, seed).unwrap();
        jitter(&mut m, seed);
        let tr = forward(&m, &random_input(&p, 3, seed)).unwrap();
        if beta == 1.0 {
            assert_eq!(tr.s, tr.w_w);
        } else {
            assert_eq!(tr.s, tr.w_s);
        }
    }
}

#[test]
fn attention_single_key_and_matrix_oracle() {
    let p = params(1, 1, 3, 1);
    let m = TadamModel::new(p, false, 3).unwrap();
    let q = array![[0.1, 0.2, 0.3], [1.0, -1.0, 0.5]];
    let k = array![[0.4, 0.0, -0.2]];
    let out = attentive_module(&m.a1, &q, &k);
    assert_eq!(out.probs, array![[1.0], [1.0]]);

    // 2 × 3 fixture against softmax(Q Kᵀ / √d) K written out
    let k = array![[0.4, 0.0, -0.2], [0.1, 0.9, 0.3], [-0.5, 0.2, 0.8]];
    let out = attentive_module(&m.a1, &q, &k);
    for a in 0..2 {
        let scores: Vec<f64> = (0..3)
            .map(|b| (0..3).map(|c| q[[a, c]] * k[[b, c]]).sum::<f64>() / 3f64.sqrt())
            .collect();
        let z: f64 = scores.iter().map(|s| s.exp()).sum();
        for c in 0..3 {
            let expect: f64 = (0..3).map(|b| scores[b].exp() / z * k[[b, c]]).sum();
            assert!((out.v_att[[a, c]] - expect).abs() < 1e-12);
        }
    }
    // no residual: the normalized rows are the layer norm of V_att alone
    let (ln, _, _) = layer_norm(&out.v_att, &m.a1.ln_gain, &m.a1.ln_bias);
    assert_eq!(ln, out.v_att_norm);
}

#[test]
fn pad_segments_use_sentinels() {
    let p = params(4, 6, 8, 2);
    let m = TadamModel::new(p, false, 4).unwrap();
    let tr = forward(&m, &random_input(&p, 2, 4)).unwrap();
    assert_eq!(tr.c3.dim(), (4, 16));
    assert_eq!(tr.sentinel, vec![false, false, true, true]);
    assert_eq!(tr.c3.row(2), tr.c3.row(3));
    let zero = attentive_module(&m.a1, &Array2::zeros((1, 8)), &Array2::zeros((0, 8)));
    assert_eq!(tr.c3.slice(s![2, ..8]), zero.out.row(0));
}

fn gru_oracle(gru: &Gru, xs: &[Array1<f64>]) -> Vec<f64> {
    let n = gru.b_z.len();
    let sig = |x: f64| 1.0 / (1.0 + (-x).exp());
    let mut h = vec![0.0; n];
    for x in xs {
        let (mut z, mut r) = (vec![0.0; n], vec![0.0; n]);
        for j in 0..n {
            let (mut az, mut ar) = (gru.b_z[j], gru.b_r[j]);
            for i in 0..n {
                az += x[i] * gru.w_z[[i, j]] + h[i] * gru.u_z[[i, j]];
                ar += x[i] * gru.w_r[[i, j]] + h[i] * gru.u_r[[i, j]];
            }
            z[j] = sig(az);
            r[j] = sig(ar);
        }
        let mut next = vec![0.0; n];
        for j in 0..n {
            let mut an = gru.b_n[j];
            for i in 0..n {
                an += x[i] * gru.w_n[[i, j]] + r[i] * h[i] * gru.u_n[[i, j]];
            }
            next[j] = z[j] * h[j] + (1.0 - z[j]) * an.tanh();
        }
        h = next;
    }
    h
}

#[test]
fn gru_matches_gate_oracle() {
    let p = params(3, 3, 2, 2);
    let mut m = TadamModel::new(p, false, 8).unwrap();
    jitter(&mut m, 8);
    let tr = forward(&m, &random_input(&p, 3, 8)).unwrap();
    let xs: Vec<Array1<f64>> = (0..3).map(|i| tr.c3.row(i).to_owned()).collect();
    let expect = gru_oracle(&m.gru, &xs);
    for (a, b) in tr.h_hat.iter().zip(&expect) {
        assert!((a - b).abs() < 1e-12);
    }
    // a single segment is one cell application to the zero state
    let p1 = params(1, 3, 2, 2);
    let m1 = TadamModel::new(p1, false, 8).unwrap();
    let tr1 = forward(&m1, &random_input(&p1, 1, 2)).unwrap();
    let step = gru_step(&m1.gru, &tr1.c3.row(0).to_owned(), &Array1::zeros(4));
    assert_eq!(tr1.h_hat, step.output());
}

#[test]
fn permuting_earlier_segments_keeps_last_projection() {
    let p = params(4, 4, 5, 2);
    // slot biases start at zero, so the softmax denominator is permutation invariant
    let m = TadamModel::new(p, false, 12).unwrap();
    let input = random_input(&p, 4, 12);
    let mut permuted = input.clone();
    for (dst, src) in [(0, 2), (1, 0), (2, 1)] {
        permuted.c1.index_axis_mut(Axis(0), dst).assign(&input.c1.index_axis(Axis(0), src));
        permuted.seg_mask.row_mut(dst).assign(&input.seg_mask.row(src));
    }
    let a = forward(&m, &input).unwrap();
    let b = forward(&m, &permuted).unwrap();
    for (x, y) in a.c3_t_hat.iter().zip(&b.c3_t_hat) {
        assert!((x - y).abs() < 1e-12);
    }
    assert!(a.h_hat.iter().zip(&b.h_hat).any(|(x, y)| (x - y).abs() > 1e-9));
}

#[test]
fn swapping_attentive_parameters_swaps_streams() {
    // with β = 0 and a segment identical to the response, s = 1 and both
    // modules see the same query and key sets
    let p = TadamParams {
        beta: 0.0,
        ..params(1, 3, 4, 2)
    };
    let mut m = TadamModel::new(p, false, 21).unwrap();
    jitter(&mut m, 21);
    let mut input = random_input(&p, 1, 21);
    input.seg_mask.row_mut(0).assign(&input.r_mask);
    input.c1.index_axis_mut(Axis(0), 0).assign(&input.r1);
    let mut swapped = m.clone();
    std::mem::swap(&mut swapped.a1, &mut swapped.a2);
    let a = forward(&m, &input).unwrap();
    let b = forward(&swapped, &input).unwrap();
    assert_eq!(a.s.to_vec(), vec![1.0]);
    assert_eq!(a.s_tilde, b.r_tilde);
    assert_eq!(a.r_tilde, b.s_tilde);
}

#[test]
fn output_bias_gradient_is_score_minus_label() {
    let p = params(2, 3, 4, 2);
    let m = TadamModel::new(p, false, 2).unwrap();
    let input = random_input(&p, 2, 2);
    for y in [0.0, 1.0] {
        let (g, loss) = gradient(&m, &input, y).unwrap();
        let tr = forward(&m, &input).unwrap();
        assert_eq!(g.b4, tr.score - y);
        assert_eq!(loss, bce_loss(tr.score, y));
    }
}

#[test]
fn saturated_score_gives_vanishing_gradients() {
    let p = params(2, 3, 4, 2);
    let m = TadamModel::new(p, false, 2).unwrap();
    let input = random_input(&p, 2, 2);
    let mut tr = forward(&m, &input).unwrap();
    tr.score = 1.0 - 1e-12;
    let g = backward(&m, &input, &tr, 1.0);
    for (name, t) in g.tensors() {
        assert!(t.iter().all(|v| v.abs() < 1e-9), "{name}");
    }
}

#[test]
fn finite_difference_contract() {
    for (bilinear, seed) in [(false, 31u64), (true, 32)] {
        let p = params(3, 4, 6, 4);
        let mut m = TadamModel::new(p, bilinear, seed).unwrap();
        jitter(&mut m, seed);
        for (present, y) in [(3, 1.0), (2, 0.0)] {
            let input = random_input(&p, present, seed + present as u64);
            let report = grad_check(&m, &input, y, 1e-5).unwrap();
            assert_eq!(report.tensors.len(), 29);
            assert!(
                report.max_rel_err < 1e-3,
                "bilinear={bilinear} present={present}: {:?}",
                report.tensors.iter().filter(|t| t.max_rel_err >= 1e-3).collect::<Vec<_>>()
            );
        }
    }
}

#[test]
fn zero_learning_rate_leaves_model_unchanged() {
    let p = params(2, 3, 4, 2);
    let m = TadamModel::new(p, false, 3).unwrap();
    let data: Vec<(TadamInput, f64)> = (0..4).map(|i| (random_input(&p, 2, i), (i % 2) as f64)).collect();
    let r = demo_train(&data, m.clone(), 3, 0.0, 1).unwrap();
    assert_eq!(r.model, m);
    assert_eq!(r.curve.len(), 3);
    assert!(r.curve.windows(2).all(|w| w[0] == w[1]));

    let a = demo_train(&data, m.clone(), 3, 0.05, 9).unwrap();
    let b = demo_train(&data, m, 3, 0.05, 9).unwrap();
    assert_eq!(a.curve, b.curve);
    assert_eq!(a.model, b.model);
}

#[test]
fn divergence_reports_curve() {
    let p = params(2, 3, 4, 2);
    let m = TadamModel::new(p, false, 3).unwrap();
    let data: Vec<(TadamInput, f64)> = (0..4).map(|i| (random_input(&p, 2, i), (i % 2) as f64)).collect();
    match demo_train(&data, m, 5, 1e300, 1) {
        Err(TadamError::Diverged { curve, .. }) => assert!(curve.len() < 5),
        other => panic!("expected divergence, got {:?}", other.map(|r| r.curve)),
    }
}

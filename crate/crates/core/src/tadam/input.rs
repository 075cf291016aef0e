use ndarray::{Array1, Array2, Array3, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{TadamError, TadamParams};
use crate::embed::EncoderSpec;

/// Markers framing the joint token sequence sent to the encoder.
pub const CLS: &str = "[CLS]";
pub const SEP: &str = "[SEP]";

/// One (context, candidate response) pair. Segments are token lists, oldest
/// first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatchInstance {
    pub context_id: String,
    pub candidate_id: String,
    pub segments: Vec<Vec<String>>,
    pub response: Vec<String>,
    #[serde(default)]
    pub label: u8,
}

/// Padded tensors for one instance. Real segments occupy the first slots.
#[derive(Debug, Clone, PartialEq)]
pub struct TadamInput {
    /// `T × L × d`.
    pub c1: Array3<f64>,
    /// `T × L`; true for real tokens.
    pub seg_mask: Array2<bool>,
    /// `L × d`.
    pub r1: Array2<f64>,
    pub r_mask: Array1<bool>,
}

impl TadamInput {
    /// Indices of segments with at least one real token.
    pub fn present(&self) -> Vec<usize> {
        (0..self.seg_mask.nrows())
            .filter(|&i| self.seg_mask.row(i).iter().any(|&m| m))
            .collect()
    }

    pub fn check(&self, p: &TadamParams) -> Result<(), TadamError> {
        let bad = |what: String| Err(TadamError::Input(what));
        if self.c1.dim() != (p.t, p.l, p.d) {
            return bad(format!("C1 has shape {:?}, expected ({}, {}, {})", self.c1.dim(), p.t, p.l, p.d));
        }
        if self.seg_mask.dim() != (p.t, p.l) {
            return bad(format!("segment mask has shape {:?}", self.seg_mask.dim()));
        }
        if self.r1.dim() != (p.l, p.d) || self.r_mask.len() != p.l {
            return bad(format!("response has shape {:?}, mask {}", self.r1.dim(), self.r_mask.len()));
        }
        if self.present().is_empty() {
            return bad("context has no non-pad segment".into());
        }
        if !self.r_mask.iter().any(|&m| m) {
            return bad("response has no tokens".into());
        }
        if self.c1.iter().chain(self.r1.iter()).any(|v| !v.is_finite()) {
            return bad("non-finite token vector".into());
        }
        Ok(())
    }
}

/// Per-token vectors from any encoder, projected to the model dimension by a
/// fixed seeded Gaussian map when the encoder's dimension differs.
#[derive(Debug, Clone)]
pub struct TokenEmbedder {
    spec: EncoderSpec,
    d: usize,
    projection: Option<Array2<f64>>,
    seed: u64,
}

impl TokenEmbedder {
    pub fn new(spec: EncoderSpec, d: usize, seed: u64) -> Self {
        let projection = spec.dim().filter(|&src| src != d).map(|src| projection(src, d, seed));
        Self {
            spec,
            d,
            projection,
            seed,
        }
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    /// Encodes every token in one batch; order is preserved.
    ///
    /// Local encoders see each token alone, so the markers are not sent to
    /// them and get zero rows; a remote service receives the whole sequence.
    pub fn embed(&self, tokens: &[String]) -> Result<Array2<f64>, TadamError> {
        let vectors = match (&self.spec, self.spec.dim()) {
            (EncoderSpec::Remote { .. }, _) | (_, None) => self.spec.encode_batch(tokens)?,
            (_, Some(dim)) => {
                let words: Vec<String> = tokens.iter().filter(|t| !is_marker(t)).cloned().collect();
                let mut encoded = self.spec.encode_batch(&words)?.into_iter();
                tokens
                    .iter()
                    .map(|t| if is_marker(t) { vec![0.0; dim] } else { encoded.next().expect("one vector per word") })
                    .collect()
            }
        };
        let src = vectors.first().map_or(self.d, Vec::len);
        if vectors.iter().any(|v| v.len() != src) {
            return Err(TadamError::Input("encoder returned ragged vectors".into()));
        }
        let raw = Array2::from_shape_vec((vectors.len(), src), vectors.into_iter().flatten().collect())
            .expect("rows checked");
        if src == self.d {
            return Ok(raw);
        }
        let proj = match &self.projection {
            Some(p) if p.nrows() == src => p.clone(),
            // dimension known only after the first remote call
            _ => projection(src, self.d, self.seed),
        };
        Ok(raw.dot(&proj))
    }
}

fn is_marker(t: &str) -> bool {
    t == CLS || t == SEP
}

fn projection(src: usize, d: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7072_6f6a);
    let scale = 1.0 / (d as f64).sqrt();
    Array2::from_shape_simple_fn((src, d), || {
        let z: f64 = StandardNormal.sample(&mut rng);
        z * scale
    })
}

/// Truncates to the model's limits: the newest `T` non-empty segments,
/// `L` leading tokens per segment and response, then enough oldest segments
/// (and finally tail tokens) to fit `max_seq_len` including markers.
fn fit_lengths(inst: &MatchInstance, p: &TadamParams) -> Result<(Vec<Vec<String>>, Vec<String>), TadamError> {
    let mut segs: Vec<Vec<String>> = inst
        .segments
        .iter()
        .filter(|s| !s.is_empty())
        .map(|s| s.iter().take(p.l).cloned().collect())
        .collect();
    if segs.is_empty() {
        return Err(TadamError::Input(format!("context {} is empty", inst.context_id)));
    }
    if inst.response.is_empty() {
        return Err(TadamError::Input(format!("response {} is empty", inst.candidate_id)));
    }
    if segs.len() > p.t {
        segs.drain(..segs.len() - p.t);
    }
    let mut response: Vec<String> = inst.response.iter().take(p.l).cloned().collect();
    let joint_len = |segs: &[Vec<String>], r: &[String]| 2 + segs.iter().map(|s| s.len() + 1).sum::<usize>() + r.len();
    while joint_len(&segs, &response) > p.max_seq_len && segs.len() > 1 {
        segs.remove(0);
    }
    while joint_len(&segs, &response) > p.max_seq_len {
        if segs[0].len() > 1 && segs[0].len() >= response.len() {
            segs[0].pop();
        } else if response.len() > 1 {
            response.pop();
        } else {
            return Err(TadamError::Input(format!(
                "max_seq_len {} cannot hold one segment token and one response token",
                p.max_seq_len
            )));
        }
    }
    Ok((segs, response))
}

/// Builds the padded tensors for one instance: the joint sequence
/// `[CLS] S_1 [SEP] … S_k [SEP] r [SEP]` is encoded in one call and split
/// back by recorded positions.
pub fn build_input(inst: &MatchInstance, embedder: &TokenEmbedder, p: &TadamParams) -> Result<TadamInput, TadamError> {
    p.validate()?;
    if embedder.dim() != p.d {
        return Err(TadamError::Params(format!("embedder dimension {} but d = {}", embedder.dim(), p.d)));
    }
    let (segs, response) = fit_lengths(inst, p)?;

    let mut joint = vec![CLS.to_string()];
    let mut seg_pos = Vec::with_capacity(segs.len());
    for s in &segs {
        seg_pos.push(joint.len());
        joint.extend(s.iter().cloned());
        joint.push(SEP.to_string());
    }
    let resp_pos = joint.len();
    joint.extend(response.iter().cloned());
    joint.push(SEP.to_string());

    let vectors = embedder.embed(&joint)?;
    let mut c1 = Array3::zeros((p.t, p.l, p.d));
    let mut seg_mask = Array2::from_elem((p.t, p.l), false);
    for (i, (s, &start)) in segs.iter().zip(&seg_pos).enumerate() {
        for y in 0..s.len() {
            c1.index_axis_mut(Axis(0), i).row_mut(y).assign(&vectors.row(start + y));
            seg_mask[[i, y]] = true;
        }
    }
    let mut r1 = Array2::zeros((p.l, p.d));
    let mut r_mask = Array1::from_elem(p.l, false);
    for u in 0..response.len() {
        r1.row_mut(u).assign(&vectors.row(resp_pos + u));
        r_mask[u] = true;
    }
    let input = TadamInput { c1, seg_mask, r1, r_mask };
    input.check(p)?;
    Ok(input)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::{Tokenizer, VectorTable};

    fn table() -> (VectorTable, usize) {
        let d = 3;
        let words = ["a", "b", "c", "x", "y"];
        let t = VectorTable::from_entries(
            d,
            words
                .iter()
                .enumerate()
                .map(|(i, w)| (w.to_string(), vec![i as f64 + 1.0, -(i as f64), 0.5 * i as f64])),
        )
        .unwrap();
        (t, d)
    }

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    fn inst(n_segs: usize) -> MatchInstance {
        MatchInstance {
            context_id: "c".into(),
            candidate_id: "r".into(),
            segments: (0..n_segs).map(|i| toks(if i % 2 == 0 { "a b" } else { "c" })).collect(),
            response: toks("x y"),
            label: 1,
        }
    }

    fn params(t: usize) -> TadamParams {
        TadamParams {
            t,
            l: 4,
            d: 3,
            h: 2,
            ..TadamParams::default()
        }
    }

    #[test]
    fn pads_missing_segments() {
        let (table, d) = table();
        let emb = TokenEmbedder::new(EncoderSpec::mean_word_vector(table, Tokenizer::default()), d, 0);
        let input = build_input(&inst(2), &emb, &params(10)).unwrap();
        assert_eq!(input.present(), vec![0, 1]);
        for i in 2..10 {
            assert!(input.seg_mask.row(i).iter().all(|&m| !m));
            assert!(input.c1.index_axis(Axis(0), i).iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn drops_oldest_segments() {
        let (table, d) = table();
        let emb = TokenEmbedder::new(EncoderSpec::mean_word_vector(table.clone(), Tokenizer::default()), d, 0);
        let mut x = inst(12);
        x.segments[0] = toks("y");
        x.segments[1] = toks("x");
        x.segments[2] = toks("c c c");
        let input = build_input(&x, &emb, &params(10)).unwrap();
        assert_eq!(input.present().len(), 10);
        // slot 0 now holds the former third segment
        assert_eq!(input.seg_mask.row(0).iter().filter(|&&m| m).count(), 3);
        assert_eq!(input.c1.slice(ndarray::s![0, 0, ..]).to_vec(), table.get("c").unwrap().to_vec());
    }

    #[test]
    fn rows_equal_table_lookups() {
        let (table, d) = table();
        let emb = TokenEmbedder::new(EncoderSpec::mean_word_vector(table.clone(), Tokenizer::default()), d, 0);
        let input = build_input(&inst(3), &emb, &params(4)).unwrap();
        assert_eq!(input.c1.slice(ndarray::s![0, 1, ..]).to_vec(), table.get("b").unwrap().to_vec());
        assert_eq!(input.c1.slice(ndarray::s![1, 0, ..]).to_vec(), table.get("c").unwrap().to_vec());
        assert_eq!(input.r1.row(1).to_vec(), table.get("y").unwrap().to_vec());
        assert_eq!(input.r_mask.to_vec(), vec![true, true, false, false]);
    }

    #[test]
    fn tokens_truncated_at_tail() {
        let (table, d) = table();
        let emb = TokenEmbedder::new(EncoderSpec::mean_word_vector(table.clone(), Tokenizer::default()), d, 0);
        let mut x = inst(1);
        x.segments[0] = toks("a b c x y");
        let input = build_input(&x, &emb, &params(2)).unwrap();
        assert!(input.seg_mask.row(0).iter().all(|&m| m));
        assert_eq!(input.c1.slice(ndarray::s![0, 3, ..]).to_vec(), table.get("x").unwrap().to_vec());
    }

    #[test]
    fn sequence_budget_drops_old_segments() {
        let (table, d) = table();
        let emb = TokenEmbedder::new(EncoderSpec::mean_word_vector(table, Tokenizer::default()), d, 0);
        let p = TadamParams {
            max_seq_len: 9,
            ..params(10)
        };
        // [CLS] a b [SEP] c [SEP] x y [SEP] = 9 tokens keeps two segments
        let input = build_input(&inst(4), &emb, &p).unwrap();
        assert_eq!(input.present().len(), 2);
    }

    #[test]
    fn empty_context_is_an_error() {
        let (table, d) = table();
        let emb = TokenEmbedder::new(EncoderSpec::mean_word_vector(table, Tokenizer::default()), d, 0);
        let mut x = inst(0);
        assert!(build_input(&x, &emb, &params(3)).is_err());
        x.segments = vec![vec![]];
        assert!(build_input(&x, &emb, &params(3)).is_err());
        let mut y = inst(1);
        y.response.clear();
        assert!(build_input(&y, &emb, &params(3)).is_err());
    }

    #[test]
    fn projects_foreign_dimension() {
        let (table, _) = table();
        let emb = TokenEmbedder::new(EncoderSpec::mean_word_vector(table, Tokenizer::default()), 5, 9);
        let p = TadamParams { d: 5, ..params(2) };
        let a = build_input(&inst(1), &emb, &p).unwrap();
        let b = build_input(&inst(1), &emb, &p).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.c1.dim(), (2, 4, 5));
    }
}

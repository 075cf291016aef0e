//! TextTiling baseline.
//!
//! The token stream of a dialogue is cut into fixed-length pseudo-sentences.
//! Each gap between pseudo-sentences is scored by the cosine similarity of
//! the blocks on either side, the scores are smoothed, and every gap gets a
//! depth score: how far the score sits below the nearest peaks on its left
//! and right. Gaps whose depth is a local maximum above `mean - std / 2`
//! become boundaries, snapped to the nearest utterance start.

use serde::{Deserialize, Serialize};

use super::{SegmentError, Segmentation};
use crate::corpus::Dialogue;
use crate::embed::{cosine, EncoderSpec};

/// Depth scores at or below this are treated as flat.
const FLAT_DEPTH: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TilingParams {
    /// Tokens per pseudo-sentence.
    pub pseudo_sentence_len: usize,
    /// Moving-average width applied to gap scores.
    pub window: usize,
    /// Pseudo-sentences per comparison block.
    pub block: usize,
}

impl Default for TilingParams {
    fn default() -> Self {
        Self::english()
    }
}

impl TilingParams {
    pub fn english() -> Self {
        Self {
            pseudo_sentence_len: 10,
            window: 6,
            block: 6,
        }
    }

    pub fn chinese() -> Self {
        Self {
            pseudo_sentence_len: 20,
            ..Self::english()
        }
    }
}

pub fn texttiling(
    dialogue: &Dialogue,
    encoder: &EncoderSpec,
    tp: &TilingParams,
) -> Result<Segmentation, SegmentError> {
    if tp.pseudo_sentence_len == 0 || tp.block == 0 || tp.window == 0 {
        return Err(SegmentError::Params("tiling parameters must be positive".into()));
    }
    let n = dialogue.len();
    let tokenizer = encoder.tokenizer();
    let mut tokens = Vec::new();
    let mut starts = Vec::with_capacity(n);
    for u in &dialogue.utterances {
        starts.push(tokens.len());
        tokens.extend(tokenizer.tokenize(&u.text));
    }
    let pseudo: Vec<&[String]> = tokens.chunks(tp.pseudo_sentence_len).collect();
    if pseudo.len() < 2 {
        return Ok(Segmentation::single(n));
    }

    let encode_err = |source| SegmentError::Encoder {
        dialogue: dialogue.id.clone(),
        start: 1,
        end: n,
        source,
    };
    let block_text = |a: usize, b: usize| {
        pseudo[a..b]
            .iter()
            .flat_map(|p| p.iter().map(String::as_str))
            .collect::<Vec<_>>()
            .join(" ")
    };
    let mut texts = Vec::with_capacity(2 * (pseudo.len() - 1));
    for g in 1..pseudo.len() {
        texts.push(block_text(g.saturating_sub(tp.block), g));
        texts.push(block_text(g, (g + tp.block).min(pseudo.len())));
    }
    let vectors = encoder.encode_batch(&texts).map_err(encode_err)?;
    let raw: Vec<f64> = vectors
        .chunks(2)
        .map(|pair| cosine(&pair[0], &pair[1]))
        .collect::<Result<_, _>>()
        .map_err(encode_err)?;
    let scores = smooth(&raw, tp.window);
    let depths = depth_scores(&scores);

    let mean = depths.iter().sum::<f64>() / depths.len() as f64;
    let var = depths.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / depths.len() as f64;
    let cutoff = mean - var.sqrt() / 2.0;

    let mut boundaries: Vec<usize> = Vec::new();
    for (idx, &depth) in depths.iter().enumerate() {
        let peak = idx == 0 || depth > depths[idx - 1];
        let peak = peak && depths.get(idx + 1).is_none_or(|&next| depth >= next);
        if !(peak && depth > cutoff && depth > FLAT_DEPTH) {
            continue;
        }
        let gap_token = (idx + 1) * tp.pseudo_sentence_len;
        if let Some(b) = nearest_utterance_start(&starts, gap_token) {
            boundaries.push(b);
        }
    }
    boundaries.sort_unstable();
    boundaries.dedup();
    Segmentation::new(n, boundaries)
}

/// Centered moving average over `width` neighbours, truncated at the edges.
fn smooth(scores: &[f64], width: usize) -> Vec<f64> {
    let half = width / 2;
    (0..scores.len())
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(scores.len());
            scores[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
        })
        .collect()
}

fn depth_scores(scores: &[f64]) -> Vec<f64> {
    (0..scores.len())
        .map(|g| {
            let mut l = g;
            while l > 0 && scores[l - 1] >= scores[l] {
                l -= 1;
            }
            let mut r = g;
            while r + 1 < scores.len() && scores[r + 1] >= scores[r] {
                r += 1;
            }
            (scores[l] - scores[g]) + (scores[r] - scores[g])
        })
        .collect()
}

/// Utterance (1-based, ≥ 2) whose first token is closest to `token`; ties go left.
fn nearest_utterance_start(starts: &[usize], token: usize) -> Option<usize> {
    starts
        .iter()
        .enumerate()
        .skip(1)
        .min_by_key(|(_, &s)| s.abs_diff(token))
        .map(|(i, _)| i + 1)
}

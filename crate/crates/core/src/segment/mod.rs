//! Topic segmentation of dialogues and segmentation metrics.
//!
//! Boundaries use the corpus convention: the 1-based index of the first
//! utterance of a new segment.

mod greedy;
mod metrics;
mod texttiling;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embed::EmbedError;

pub use greedy::{segment_dialogue, CandidateCost, SegIteration, SegTrace};
pub use metrics::{
    align_by_id, mean_window_diff, seg_f1, seg_mae, window_diff, BoundaryScores, Keyed,
};
pub use texttiling::{texttiling, TilingParams};

#[derive(Debug, Error)]
pub enum SegmentError {
    #[error("invalid parameters: {0}")]
    Params(String),
    #[error("invalid segmentation: {0}")]
    Invalid(String),
    #[error("dialogue {dialogue:?}, utterances {start}..={end}: {source}")]
    Encoder {
        dialogue: String,
        start: usize,
        end: usize,
        #[source]
        source: EmbedError,
    },
    #[error("dialogue shorter than window ({n} <= {w})")]
    TooShort { n: usize, w: usize },
    #[error("dialogue ids do not line up: {0}")]
    IdMismatch(String),
}

/// Parameters of the greedy segmentation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SegParams {
    /// Maximum utterances per segment.
    #[serde(rename = "R")]
    pub r: usize,
    /// Candidate cuts are checked every `k` utterances.
    pub k: usize,
    /// Context window on each side, in utterances.
    pub d: usize,
    /// A cut is confirmed only when its cost is at most `theta`.
    pub theta: f64,
}

impl Default for SegParams {
    fn default() -> Self {
        Self {
            r: 8,
            k: 2,
            d: 2,
            theta: 0.6,
        }
    }
}

impl SegParams {
    pub fn validate(&self) -> Result<(), SegmentError> {
        if self.r == 0 || self.k == 0 || self.d == 0 {
            return Err(SegmentError::Params("R, k and d must be at least 1".into()));
        }
        if self.k > self.r {
            return Err(SegmentError::Params(format!(
                "k = {} exceeds R = {}",
                self.k, self.r
            )));
        }
        if !self.theta.is_finite() {
            return Err(SegmentError::Params("theta must be finite".into()));
        }
        Ok(())
    }
}

/// A partition of utterances `1..=n` into contiguous segments.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segmentation {
    n: usize,
    boundaries: Vec<usize>,
}

impl Segmentation {
    pub fn new(n: usize, boundaries: Vec<usize>) -> Result<Self, SegmentError> {
        if n == 0 {
            return Err(SegmentError::Invalid("no utterances".into()));
        }
        if boundaries.windows(2).any(|w| w[0] >= w[1]) {
            return Err(SegmentError::Invalid(format!(
                "boundaries not strictly increasing: {boundaries:?}"
            )));
        }
        if boundaries.iter().any(|&b| b < 2 || b > n) {
            return Err(SegmentError::Invalid(format!(
                "boundary outside 2..={n}: {boundaries:?}"
            )));
        }
        Ok(Self { n, boundaries })
    }

    /// One segment covering everything.
    pub fn single(n: usize) -> Self {
        Self {
            n: n.max(1),
            boundaries: vec![],
        }
    }

    /// Builds a segmentation from consecutive segment lengths.
    pub fn from_lengths(lengths: &[usize]) -> Result<Self, SegmentError> {
        if lengths.contains(&0) {
            return Err(SegmentError::Invalid("zero-length segment".into()));
        }
        let mut boundaries = Vec::with_capacity(lengths.len().saturating_sub(1));
        let mut pos = 1;
        for (i, len) in lengths.iter().enumerate() {
            if i > 0 {
                boundaries.push(pos);
            }
            pos += len;
        }
        Self::new(pos - 1, boundaries)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn boundaries(&self) -> &[usize] {
        &self.boundaries
    }

    pub fn num_segments(&self) -> usize {
        self.boundaries.len() + 1
    }

    /// Inclusive 1-based `(start, end)` spans, in order.
    pub fn spans(&self) -> Vec<(usize, usize)> {
        let mut spans = Vec::with_capacity(self.num_segments());
        let mut start = 1;
        for &b in &self.boundaries {
            spans.push((start, b - 1));
            start = b;
        }
        spans.push((start, self.n));
        spans
    }

    /// Segment index (0-based) of every utterance.
    pub fn labels(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.n);
        for (s, (start, end)) in self.spans().into_iter().enumerate() {
            out.extend(std::iter::repeat_n(s, end - start + 1));
        }
        out
    }
}

/// JSONL record of a predicted segmentation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentationRecord {
    pub id: String,
    pub boundaries: Vec<usize>,
}

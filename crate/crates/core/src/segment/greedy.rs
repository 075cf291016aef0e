//! Greedy topic-shift segmentation.
//!
//! Starting at utterance `i`, candidate segments `u_i ..= u_{i+j-1}` are
//! scored every `k` utterances (and at the end of the dialogue). The cost of
//! a candidate is its highest cosine similarity to the `d` utterances on
//! either side; the cheapest candidate within `R` utterances ends the
//! segment. When even the cheapest candidate costs more than `theta` no cut
//! is trusted and the segment is closed after `R` utterances.
//!
//! A side with no context (dialogue start or end) is left out of the max. A
//! candidate with no context on either side has nothing to be compared with
//! and is not scored.

use serde::Serialize;

use super::{SegParams, SegmentError, Segmentation};
use crate::corpus::Dialogue;
use crate::embed::{cosine, EncoderSpec};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CandidateCost {
    /// Candidate length in utterances.
    pub j: usize,
    pub left: Option<f64>,
    pub right: Option<f64>,
    pub cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SegIteration {
    /// First utterance of the segment being grown.
    pub start: usize,
    pub candidates: Vec<CandidateCost>,
    /// Length of the cheapest candidate, if any candidate was scored.
    pub best: Option<usize>,
    /// Whether the segment was closed at `R` because no cut passed `theta`.
    pub forced: bool,
    pub end: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct SegTrace {
    pub iterations: Vec<SegIteration>,
}

/// Segments one dialogue, optionally recording every scored candidate.
pub fn segment_dialogue(
    dialogue: &Dialogue,
    encoder: &EncoderSpec,
    params: &SegParams,
    emit_trace: bool,
) -> Result<(Segmentation, Option<SegTrace>), SegmentError> {
    params.validate()?;
    let n = dialogue.len();
    if n == 0 {
        return Err(SegmentError::Invalid(format!(
            "dialogue {:?} has no utterances",
            dialogue.id
        )));
    }
    let mut trace = emit_trace.then(SegTrace::default);
    let mut boundaries = Vec::new();
    let mut i = 1;
    while i <= n {
        let iteration = grow_segment(dialogue, encoder, params, i)?;
        let end = iteration.end;
        if end < n {
            boundaries.push(end + 1);
        }
        if let Some(t) = trace.as_mut() {
            t.iterations.push(iteration);
        }
        i = end + 1;
    }
    Ok((Segmentation::new(n, boundaries)?, trace))
}

fn grow_segment(
    dialogue: &Dialogue,
    encoder: &EncoderSpec,
    p: &SegParams,
    i: usize,
) -> Result<SegIteration, SegmentError> {
    let n = dialogue.len();
    let max_j = p.r.min(n - i + 1);
    let left = (i > 1).then(|| (i.saturating_sub(p.d).max(1), i - 1));

    // (j, right-context span) for every evaluated cut
    let mut cuts: Vec<(usize, Option<(usize, usize)>)> = Vec::new();
    for j in 1..=max_j {
        let at_end = i + j - 1 == n;
        if j % p.k != 0 && !at_end {
            continue;
        }
        let right = (!at_end).then(|| (i + j, (i + j + p.d - 1).min(n)));
        if left.is_none() && right.is_none() {
            continue;
        }
        cuts.push((j, right));
    }

    // one batch per iteration keeps remote encoders efficient
    let mut texts = Vec::with_capacity(1 + 2 * cuts.len());
    if let Some((a, b)) = left {
        texts.push(dialogue.span_text(a, b));
    }
    for &(j, right) in &cuts {
        texts.push(dialogue.span_text(i, i + j - 1));
        if let Some((a, b)) = right {
            texts.push(dialogue.span_text(a, b));
        }
    }
    let vectors = encoder
        .encode_batch(&texts)
        .map_err(|source| SegmentError::Encoder {
            dialogue: dialogue.id.clone(),
            start: i,
            end: i + max_j - 1,
            source,
        })?;
    let encoder_err = |source| SegmentError::Encoder {
        dialogue: dialogue.id.clone(),
        start: i,
        end: i + max_j - 1,
        source,
    };

    let mut vecs = vectors.iter();
    let left_vec = left.map(|_| vecs.next().expect("left context vector"));
    let mut candidates = Vec::with_capacity(cuts.len());
    for &(j, right) in &cuts {
        let cand = vecs.next().expect("candidate vector");
        let right_vec = right.map(|_| vecs.next().expect("right context vector"));
        let l = left_vec.map(|v| cosine(cand, v)).transpose().map_err(encoder_err)?;
        let r = right_vec.map(|v| cosine(cand, v)).transpose().map_err(encoder_err)?;
        let cost = match (l, r) {
            (Some(a), Some(b)) => a.max(b),
            (Some(a), None) | (None, Some(a)) => a,
            (None, None) => unreachable!("candidates without context are skipped"),
        };
        candidates.push(CandidateCost {
            j,
            left: l,
            right: r,
            cost,
        });
    }

    // strict `<` keeps the earliest cut on ties
    let best = candidates
        .iter()
        .fold(None::<&CandidateCost>, |acc, c| match acc {
            Some(b) if b.cost <= c.cost => Some(b),
            _ => Some(c),
        });
    let (end, forced) = match best {
        Some(b) if b.cost <= p.theta => (i + b.j - 1, false),
        _ => ((i + p.r - 1).min(n), true),
    };
    Ok(SegIteration {
        start: i,
        best: best.map(|b| b.j),
        candidates,
        forced,
        end,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Utterance;
    use crate::embed::{Tokenizer, VectorTable};
    use proptest::prelude::*;

    /// Word `tK` maps to the K-th standard basis vector.
    fn one_hot(topics: usize) -> EncoderSpec {
        let table = VectorTable::from_entries(
            topics,
            (0..topics).map(|t| {
                let mut v = vec![0.0; topics];
                v[t] = 1.0;
                (format!("t{t}"), v)
            }),
        )
        .unwrap();
        EncoderSpec::mean_word_vector(table, Tokenizer::WhitespaceLower)
    }

    fn topic_dialogue(topics: &[usize]) -> Dialogue {
        Dialogue::new(
            "fixture",
            topics
                .iter()
                .map(|t| Utterance::new("s", format!("t{t} t{t}")))
                .collect(),
        )
    }

    fn oracle_cost(topics: &[usize], dims: usize, i: usize, j: usize, d: usize) -> Option<f64> {
        // direct evaluation from topic histograms
        let hist = |a: usize, b: usize| {
            let mut h = vec![0.0; dims];
            for &t in &topics[a - 1..b] {
                h[t] += 1.0;
            }
            h
        };
        let n = topics.len();
        let cand = hist(i, i + j - 1);
        let cos = |x: &[f64], y: &[f64]| {
            let dot: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
            let nx: f64 = x.iter().map(|a| a * a).sum::<f64>().sqrt();
            let ny: f64 = y.iter().map(|a| a * a).sum::<f64>().sqrt();
            dot / (nx * ny)
        };
        let left = (i > 1).then(|| cos(&cand, &hist(i.saturating_sub(d).max(1), i - 1)));
        let right = (i + j <= n).then(|| cos(&cand, &hist(i + j, (i + j + d - 1).min(n))));
        match (left, right) {
            (None, None) => None,
            (a, b) => Some(a.unwrap_or(f64::MIN).max(b.unwrap_or(f64::MIN))),
        }
    }

    #[test]
    fn short_dialogue_is_one_segment() {
        let d = topic_dialogue(&[0, 1]);
        let (seg, _) = segment_dialogue(&d, &one_hot(2), &SegParams::default(), false).unwrap();
        assert!(seg.boundaries().is_empty());
    }

    #[test]
    fn two_topics_cut_at_switch() {
        let topics = [0, 0, 0, 0, 1, 1, 1, 1];
        let d = topic_dialogue(&topics);
        let p = SegParams { r: 8, k: 2, d: 2, theta: 0.6 };
        let (seg, trace) = segment_dialogue(&d, &one_hot(2), &p, true).unwrap();
        assert_eq!(seg.boundaries(), &[5]);

        // every recorded cost matches the enumeration oracle and the chosen
        // cut attains the minimum
        for it in &trace.unwrap().iterations {
            for c in &it.candidates {
                let expected = oracle_cost(&topics, 2, it.start, c.j, p.d).unwrap();
                assert!((c.cost - expected).abs() < 1e-12);
            }
            let min = it.candidates.iter().map(|c| c.cost).fold(f64::INFINITY, f64::min);
            let best = it.candidates.iter().find(|c| Some(c.j) == it.best).unwrap();
            assert_eq!(best.cost, min);
        }
    }

    #[test]
    fn negative_theta_forces_blocks_of_r() {
        let d = topic_dialogue(&[0, 1, 0, 1, 1, 0, 0, 1, 0, 1, 1]);
        let p = SegParams { r: 3, k: 1, d: 2, theta: -1.0 };
        let (seg, _) = segment_dialogue(&d, &one_hot(2), &p, false).unwrap();
        assert_eq!(seg.boundaries(), &[4, 7, 10]);
    }

    #[test]
    fn encoder_errors_carry_range() {
        let table = VectorTable::from_entries(2, [("t0".to_string(), vec![1.0, 0.0])]).unwrap();
        let enc = EncoderSpec::Remote {
            client: crate::embed::RemoteEncoder::new(crate::embed::RemoteConfig {
                retries: 0,
                timeout: std::time::Duration::from_millis(200),
                ..crate::embed::RemoteConfig::new("http://127.0.0.1:9")
            }),
            expected_dim: Some(table.dim()),
        };
        let d = topic_dialogue(&[0, 0, 0, 0]);
        let err = segment_dialogue(&d, &enc, &SegParams::default(), false).unwrap_err();
        assert!(matches!(err, SegmentError::Encoder { start: 1, .. }), "{err}");
    }

    proptest! {
        #[test]
        fn spans_always_partition(
            topics in prop::collection::vec(0usize..3, 1..40),
            r in 1usize..9,
            k_raw in 1usize..9,
            d in 1usize..4,
            theta in -1.0f64..1.1,
        ) {
            let k = k_raw.min(r);
            let dia = topic_dialogue(&topics);
            let p = SegParams { r, k, d, theta };
            let (seg, trace) = segment_dialogue(&dia, &one_hot(3), &p, true).unwrap();
            let spans = seg.spans();
            prop_assert_eq!(spans.first().unwrap().0, 1);
            prop_assert_eq!(spans.last().unwrap().1, topics.len());
            for w in spans.windows(2) {
                prop_assert_eq!(w[0].1 + 1, w[1].0);
            }
            for (a, b) in &spans {
                prop_assert!(b - a < r + k);
            }
            for it in trace.unwrap().iterations {
                for c in it.candidates {
                    prop_assert!((-1.0..=1.0).contains(&c.cost));
                }
            }
        }

        #[test]
        fn force_close_gives_blocks_of_r(n in 1usize..40, r in 1usize..9) {
            let topics: Vec<usize> = (0..n).map(|i| i % 2).collect();
            let dia = topic_dialogue(&topics);
            let p = SegParams { r, k: 1, d: 2, theta: -1.0 };
            let (seg, _) = segment_dialogue(&dia, &one_hot(2), &p, false).unwrap();
            let spans = seg.spans();
            for (a, b) in &spans[..spans.len() - 1] {
                prop_assert_eq!(b - a + 1, r);
            }
        }
    }
}

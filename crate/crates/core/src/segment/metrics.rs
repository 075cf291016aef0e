use std::collections::HashMap;

use serde::Serialize;

use super::{SegmentError, Segmentation};

/// A segmentation tagged with its dialogue id.
pub type Keyed = (String, Segmentation);

/// Pairs predictions with gold segmentations by id, in gold order.
pub fn align_by_id<'a>(
    preds: &'a [Keyed],
    golds: &'a [Keyed],
) -> Result<Vec<(&'a Segmentation, &'a Segmentation)>, SegmentError> {
    if preds.len() != golds.len() {
        return Err(SegmentError::IdMismatch(format!(
            "{} predictions for {} gold dialogues",
            preds.len(),
            golds.len()
        )));
    }
    let by_id: HashMap<&str, &Segmentation> =
        preds.iter().map(|(id, s)| (id.as_str(), s)).collect();
    golds
        .iter()
        .map(|(id, gold)| {
            let pred = by_id
                .get(id.as_str())
                .ok_or_else(|| SegmentError::IdMismatch(format!("no prediction for {id:?}")))?;
            if pred.n() != gold.n() {
                return Err(SegmentError::IdMismatch(format!(
                    "{id:?}: prediction covers {} utterances, gold {}",
                    pred.n(),
                    gold.n()
                )));
            }
            Ok((*pred, gold))
        })
        .collect()
}

/// Mean absolute difference in segment counts.
pub fn seg_mae(preds: &[Keyed], golds: &[Keyed]) -> Result<f64, SegmentError> {
    let pairs = align_by_id(preds, golds)?;
    if pairs.is_empty() {
        return Ok(0.0);
    }
    let total: usize = pairs
        .iter()
        .map(|(p, g)| p.num_segments().abs_diff(g.num_segments()))
        .sum();
    Ok(total as f64 / pairs.len() as f64)
}

/// WindowDiff with window `w`: the fraction of windows `(i, i + w]` whose
/// boundary counts differ between prediction and reference.
pub fn window_diff(pred: &Segmentation, gold: &Segmentation, w: usize) -> Result<f64, SegmentError> {
    let n = gold.n();
    if pred.n() != n {
        return Err(SegmentError::IdMismatch(format!(
            "prediction covers {} utterances, gold {n}",
            pred.n()
        )));
    }
    if n <= w {
        return Err(SegmentError::TooShort { n, w });
    }
    let prefix = |s: &Segmentation| {
        // prefix[x] = boundaries b <= x
        let mut counts = vec![0usize; n + 1];
        for &b in s.boundaries() {
            counts[b] += 1;
        }
        for x in 1..=n {
            counts[x] += counts[x - 1];
        }
        counts
    };
    let (cp, cg) = (prefix(pred), prefix(gold));
    let windows = n - w;
    let errors = (1..=windows)
        .filter(|&i| cp[i + w] - cp[i] != cg[i + w] - cg[i])
        .count();
    Ok(errors as f64 / windows as f64)
}

/// Mean WindowDiff over dialogues longer than `w`; also returns how many
/// dialogues were too short to score.
pub fn mean_window_diff(
    preds: &[Keyed],
    golds: &[Keyed],
    w: usize,
) -> Result<(f64, usize), SegmentError> {
    let pairs = align_by_id(preds, golds)?;
    let mut sum = 0.0;
    let mut scored = 0usize;
    for (p, g) in &pairs {
        if g.n() <= w {
            continue;
        }
        sum += window_diff(p, g, w)?;
        scored += 1;
    }
    let mean = if scored == 0 { 0.0 } else { sum / scored as f64 };
    Ok((mean, pairs.len() - scored))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundaryScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Micro-averaged exact-match boundary precision, recall and F1.
///
/// With no boundaries on either side the corpus scores 1; with boundaries on
/// only one side it scores 0.
pub fn seg_f1(preds: &[Keyed], golds: &[Keyed]) -> Result<BoundaryScores, SegmentError> {
    let pairs = align_by_id(preds, golds)?;
    let (mut hits, mut npred, mut ngold) = (0usize, 0usize, 0usize);
    for (p, g) in &pairs {
        npred += p.boundaries().len();
        ngold += g.boundaries().len();
        hits += p
            .boundaries()
            .iter()
            .filter(|b| g.boundaries().binary_search(b).is_ok())
            .count();
    }
    Ok(match (npred, ngold) {
        (0, 0) => BoundaryScores {
            precision: 1.0,
            recall: 1.0,
            f1: 1.0,
        },
        (0, _) | (_, 0) => BoundaryScores {
            precision: if npred == 0 { 0.0 } else { hits as f64 / npred as f64 },
            recall: if ngold == 0 { 0.0 } else { hits as f64 / ngold as f64 },
            f1: 0.0,
        },
        _ => {
            let precision = hits as f64 / npred as f64;
            let recall = hits as f64 / ngold as f64;
            let f1 = if hits == 0 {
                0.0
            } else {
                2.0 * precision * recall / (precision + recall)
            };
            BoundaryScores {
                precision,
                recall,
                f1,
            }
        }
    })
}

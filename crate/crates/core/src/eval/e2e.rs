use std::collections::{BTreeMap, BTreeSet, HashMap};

use ndarray::Array2;
use serde::Serialize;

use super::clustering::dice;
use super::{hungarian, EvalError};
use crate::corpus::IGNORE_TOPIC;
use crate::segment::Segmentation;

/// Predicted and gold segmentations of one dialogue, with one cluster per
/// predicted segment and one topic per gold segment.
#[derive(Debug, Clone, PartialEq)]
pub struct E2eDialogue {
    pub id: String,
    pub pred: Segmentation,
    pub pred_clusters: Vec<usize>,
    pub gold: Segmentation,
    pub gold_topics: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TopicF1 {
    pub topic: String,
    pub true_positives: usize,
    pub predicted: usize,
    pub gold: usize,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct E2eReport {
    #[serde(rename = "F1_all")]
    pub f1_all: f64,
    pub per_topic: Vec<TopicF1>,
    pub mapping: BTreeMap<usize, String>,
    /// Predicted segments that found a gold partner at the threshold.
    pub matched: usize,
    pub predicted_segments: usize,
    pub overlap_threshold: f64,
}

fn overlap(a: (usize, usize), b: (usize, usize)) -> usize {
    let lo = a.0.max(b.0);
    let hi = a.1.min(b.1);
    (hi + 1).saturating_sub(lo)
}

/// End-to-end F1 of joint segmentation and clustering.
///
/// Every predicted segment is matched to the gold segment of highest
/// overlap F1 (earliest on ties); matches below `overlap_threshold` are
/// dropped. Clusters are mapped to topics by Hungarian assignment on the
/// overlap F1 of matched pairs. For each gold topic `t`, precision is the
/// share of matched segments mapped to `t` whose partner has topic `t`, and
/// recall the share of gold segments of topic `t` that some such segment
/// found. `F1_all` averages over gold topics.
pub fn e2e_f1(dialogues: &[E2eDialogue], overlap_threshold: f64) -> Result<E2eReport, EvalError> {
    // (dialogue, gold segment) for each matched predicted segment, with its cluster
    let mut matches: Vec<(usize, usize, usize)> = Vec::new();
    let mut predicted_segments = 0;
    let mut gold_per_topic: BTreeMap<&str, usize> = BTreeMap::new();
    for (d, dia) in dialogues.iter().enumerate() {
        if dia.pred.n() != dia.gold.n() {
            return Err(EvalError::Mismatch(format!(
                "{}: prediction covers {} utterances, gold {}",
                dia.id,
                dia.pred.n(),
                dia.gold.n()
            )));
        }
        let pspans = dia.pred.spans();
        let gspans = dia.gold.spans();
        if pspans.len() != dia.pred_clusters.len() || gspans.len() != dia.gold_topics.len() {
            return Err(EvalError::Mismatch(format!(
                "{}: {} predicted segments with {} clusters, {} gold segments with {} topics",
                dia.id,
                pspans.len(),
                dia.pred_clusters.len(),
                gspans.len(),
                dia.gold_topics.len()
            )));
        }
        for t in dia.gold_topics.iter().filter(|t| t.as_str() != IGNORE_TOPIC) {
            *gold_per_topic.entry(t.as_str()).or_default() += 1;
        }
        predicted_segments += pspans.len();
        for (p, &ps) in pspans.iter().enumerate() {
            let len = |s: (usize, usize)| s.1 - s.0 + 1;
            let best = gspans
                .iter()
                .enumerate()
                .map(|(g, &gs)| (g, dice(overlap(ps, gs), len(ps), len(gs))))
                .fold(None::<(usize, f64)>, |acc, (g, f)| match acc {
                    Some((_, bf)) if bf >= f => acc,
                    _ => Some((g, f)),
                });
            if let Some((g, f)) = best {
                if f >= overlap_threshold && dia.gold_topics[g] != IGNORE_TOPIC {
                    matches.push((d, g, dia.pred_clusters[p]));
                }
            }
        }
    }
    if gold_per_topic.is_empty() {
        return Err(EvalError::Empty("no gold segments with a topic".into()));
    }

    let topic_of = |d: usize, g: usize| dialogues[d].gold_topics[g].as_str();
    let clusters: Vec<usize> = matches.iter().map(|m| m.2).collect::<BTreeSet<_>>().into_iter().collect();
    let topics: Vec<&str> = gold_per_topic.keys().copied().collect();
    let ci: HashMap<usize, usize> = clusters.iter().enumerate().map(|(i, &c)| (c, i)).collect();
    let ti: HashMap<&str, usize> = topics.iter().enumerate().map(|(i, &t)| (t, i)).collect();

    let mut mapping = BTreeMap::new();
    if !clusters.is_empty() {
        let mut joint = Array2::<usize>::zeros((clusters.len(), topics.len()));
        for &(d, g, c) in &matches {
            joint[[ci[&c], ti[topic_of(d, g)]]] += 1;
        }
        let csize: Vec<usize> = joint.rows().into_iter().map(|r| r.sum()).collect();
        let tsize: Vec<usize> = joint.columns().into_iter().map(|c| c.sum()).collect();
        let cost = Array2::from_shape_fn(joint.dim(), |(c, t)| 1.0 - dice(joint[[c, t]], csize[c], tsize[t]));
        for (c, t) in hungarian(&cost)?.row_to_col.iter().enumerate() {
            if let Some(t) = t {
                mapping.insert(clusters[c], topics[*t].to_string());
            }
        }
    }

    let mut per_topic = Vec::with_capacity(topics.len());
    for &t in &topics {
        let mapped: Vec<&(usize, usize, usize)> = matches
            .iter()
            .filter(|m| mapping.get(&m.2).map(String::as_str) == Some(t))
            .collect();
        let found: BTreeSet<(usize, usize)> = mapped
            .iter()
            .filter(|m| topic_of(m.0, m.1) == t)
            .map(|m| (m.0, m.1))
            .collect();
        let gold = gold_per_topic[t];
        let tp = found.len();
        per_topic.push(TopicF1 {
            topic: t.to_string(),
            true_positives: tp,
            predicted: mapped.len(),
            gold,
            f1: 2.0 * tp as f64 / (mapped.len() + gold) as f64,
        });
    }
    let f1_all = per_topic.iter().map(|t| t.f1).sum::<f64>() / per_topic.len() as f64;
    Ok(E2eReport {
        f1_all,
        per_topic,
        mapping,
        matched: matches.len(),
        predicted_segments,
        overlap_threshold,
    })
}

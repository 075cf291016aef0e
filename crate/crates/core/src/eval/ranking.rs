use std::io::BufRead;

use serde::{Deserialize, Serialize};

use super::EvalError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Candidate {
    pub id: String,
    pub score: f64,
    /// 1 for a relevant response, 0 otherwise.
    pub label: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RankedCandidates {
    pub context_id: String,
    pub candidates: Vec<Candidate>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RecallAt {
    pub k: usize,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RsReport {
    /// Candidates per context.
    pub n: usize,
    pub recall: Vec<RecallAt>,
    #[serde(rename = "MAP")]
    pub map: f64,
    #[serde(rename = "MRR")]
    pub mrr: f64,
    #[serde(rename = "P@1")]
    pub p_at_1: f64,
    /// Contexts that contributed to the averages.
    pub contexts: usize,
    /// Contexts skipped because none of their candidates is relevant.
    pub excluded_no_positive: usize,
}

impl RsReport {
    pub fn recall_at(&self, k: usize) -> Option<f64> {
        self.recall.iter().find(|r| r.k == k).map(|r| r.value)
    }
}

/// Relevance labels in ranked order: descending score, input order on ties.
pub fn ranked_labels(ctx: &RankedCandidates) -> Vec<bool> {
    let mut order: Vec<&Candidate> = ctx.candidates.iter().collect();
    order.sort_by(|a, b| b.score.total_cmp(&a.score));
    order.into_iter().map(|c| c.label == 1).collect()
}

/// Response-selection metrics over contexts that each rank `n` candidates.
pub fn rs_metrics(data: &[RankedCandidates], n: usize, ks: &[usize]) -> Result<RsReport, EvalError> {
    if data.is_empty() {
        return Err(EvalError::Empty("no contexts to rank".into()));
    }
    let mut recall_sums = vec![0.0; ks.len()];
    let (mut ap_sum, mut rr_sum, mut p1_sum) = (0.0, 0.0, 0.0);
    let mut contexts = 0usize;
    for ctx in data {
        if ctx.candidates.len() != n {
            return Err(EvalError::Mismatch(format!(
                "context {} has {} candidates, expected {n}",
                ctx.context_id,
                ctx.candidates.len()
            )));
        }
        if let Some(c) = ctx.candidates.iter().find(|c| !c.score.is_finite() || c.label > 1) {
            return Err(EvalError::NonFinite(format!(
                "context {} candidate {}: score {} label {}",
                ctx.context_id, c.id, c.score, c.label
            )));
        }
        let labels = ranked_labels(ctx);
        let relevant = labels.iter().filter(|&&l| l).count();
        if relevant == 0 {
            continue;
        }
        contexts += 1;
        for (slot, &k) in recall_sums.iter_mut().zip(ks) {
            let hits = labels.iter().take(k).filter(|&&l| l).count();
            *slot += hits as f64 / relevant as f64;
        }
        let mut hits = 0usize;
        let mut precision_sum = 0.0;
        for (rank, _) in labels.iter().enumerate().filter(|(_, &l)| l) {
            hits += 1;
            precision_sum += hits as f64 / (rank + 1) as f64;
        }
        ap_sum += precision_sum / relevant as f64;
        let first = labels.iter().position(|&l| l).expect("relevant > 0");
        rr_sum += 1.0 / (first + 1) as f64;
        if labels[0] {
            p1_sum += 1.0;
        }
    }
    let denom = contexts.max(1) as f64;
    Ok(RsReport {
        n,
        recall: ks
            .iter()
            .zip(&recall_sums)
            .map(|(&k, s)| RecallAt { k, value: s / denom })
            .collect(),
        map: ap_sum / denom,
        mrr: rr_sum / denom,
        p_at_1: p1_sum / denom,
        contexts,
        excluded_no_positive: data.len() - contexts,
    })
}

/// Reads one [`RankedCandidates`] per non-blank line.
pub fn read_ranked<R: BufRead>(reader: R) -> Result<Vec<RankedCandidates>, EvalError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| EvalError::Io(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| EvalError::Json { line: i + 1, source: e })?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ctx(scores_labels: &[(f64, u8)]) -> RankedCandidates {
        RankedCandidates {
            context_id: "c".into(),
            candidates: scores_labels
                .iter()
                .enumerate()
                .map(|(i, &(score, label))| Candidate {
                    id: format!("r{i}"),
                    score,
                    label,
                })
                .collect(),
        }
    }

    fn ten(positives_at: &[usize]) -> RankedCandidates {
        ctx(&(0..10)
            .map(|i| (10.0 - i as f64, u8::from(positives_at.contains(&i))))
            .collect::<Vec<_>>())
    }

    #[test]
    fn top_ranked_positive() {
        let r = rs_metrics(&[ten(&[0])], 10, &[1, 2, 5]).unwrap();
        assert_eq!(r.recall_at(1), Some(1.0));
        assert_eq!(r.recall_at(5), Some(1.0));
        assert_eq!((r.map, r.mrr, r.p_at_1), (1.0, 1.0, 1.0));
    }

    #[test]
    fn second_ranked_positive() {
        let r = rs_metrics(&[ten(&[1])], 10, &[1, 2]).unwrap();
        assert_eq!(r.recall_at(1), Some(0.0));
        assert_eq!(r.recall_at(2), Some(1.0));
        assert_eq!((r.mrr, r.p_at_1), (0.5, 0.0));
    }

    #[test]
    fn two_positives_average_precision() {
        let r = rs_metrics(&[ten(&[0, 2])], 10, &[1]).unwrap();
        assert!((r.map - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn ties_keep_input_order() {
        let c = ctx(&[(0.5, 0), (0.5, 1), (0.1, 0)]);
        assert_eq!(ranked_labels(&c), vec![false, true, false]);
    }

    #[test]
    fn contexts_without_positives_excluded() {
        let r = rs_metrics(&[ten(&[0]), ten(&[])], 10, &[1]).unwrap();
        assert_eq!((r.contexts, r.excluded_no_positive), (1, 1));
        assert_eq!(r.map, 1.0);
        assert!(rs_metrics(&[ten(&[0])], 9, &[1]).is_err());
    }

    #[test]
    fn parses_jsonl() {
        let text = r#"{"context_id":"a","candidates":[{"id":"x","score":0.2,"label":1}]}

{"context_id":"b","candidates":[]}"#;
        let v = read_ranked(text.as_bytes()).unwrap();
        assert_eq!(v.len(), 2);
        assert!(read_ranked(r#"{"context_id":"a"}"#.as_bytes()).is_err());
    }
}

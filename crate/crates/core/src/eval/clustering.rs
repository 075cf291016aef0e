use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::hash::Hash;

use ndarray::Array2;
use serde::Serialize;

use super::{hungarian, EvalError};
use crate::corpus::IGNORE_TOPIC;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClusterScore {
    pub cluster: usize,
    /// Topic the cluster was mapped to, if any.
    pub topic: Option<String>,
    pub f1: f64,
    pub size: usize,
    pub retained: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClusterEvalReport {
    #[serde(rename = "N_c")]
    pub n_c: usize,
    /// Percent of all evaluated segments that fall in retained clusters.
    #[serde(rename = "C_rate")]
    pub c_rate: f64,
    /// Percent of all evaluated segments in a retained cluster mapped to
    /// their gold topic.
    #[serde(rename = "A_rate")]
    pub a_rate: f64,
    /// The same count as `A_rate` relative to segments in retained clusters.
    #[serde(rename = "A_rate_retained")]
    pub a_rate_retained: f64,
    #[serde(rename = "NMI")]
    pub nmi: f64,
    pub per_cluster: Vec<ClusterScore>,
    /// Segments scored (gold topic other than `ignore`).
    pub evaluated: usize,
    pub ignored: usize,
    pub f1_threshold: f64,
}

impl ClusterEvalReport {
    pub fn mapping(&self) -> BTreeMap<usize, String> {
        self.per_cluster
            .iter()
            .filter_map(|c| c.topic.clone().map(|t| (c.cluster, t)))
            .collect()
    }
}

/// `2|a ∩ b| / (|a| + |b|)`.
pub(crate) fn dice(overlap: usize, a: usize, b: usize) -> f64 {
    if a + b == 0 {
        0.0
    } else {
        2.0 * overlap as f64 / (a + b) as f64
    }
}

/// Maps clusters to topics by maximizing summed F1, keeps clusters whose
/// mapped F1 reaches `f1_threshold`, and reports coverage and accuracy.
///
/// Segments whose gold topic is `ignore` are left out entirely.
pub fn cluster_metrics(pred: &[usize], gold: &[String], f1_threshold: f64) -> Result<ClusterEvalReport, EvalError> {
    if pred.len() != gold.len() {
        return Err(EvalError::LengthMismatch {
            pred: pred.len(),
            gold: gold.len(),
        });
    }
    let kept: Vec<(usize, &str)> = pred
        .iter()
        .zip(gold)
        .filter(|(_, g)| g.as_str() != IGNORE_TOPIC)
        .map(|(&p, g)| (p, g.as_str()))
        .collect();
    if kept.is_empty() {
        return Err(EvalError::Empty("no segments with a gold topic".into()));
    }
    let n = kept.len();
    let clusters: Vec<usize> = kept.iter().map(|k| k.0).collect::<BTreeSet<_>>().into_iter().collect();
    let topics: Vec<&str> = kept.iter().map(|k| k.1).collect::<BTreeSet<_>>().into_iter().collect();
    let ci: HashMap<usize, usize> = clusters.iter().enumerate().map(|(i, &c)| (c, i)).collect();
    let ti: HashMap<&str, usize> = topics.iter().enumerate().map(|(i, &t)| (t, i)).collect();

    let mut joint = Array2::<usize>::zeros((clusters.len(), topics.len()));
    for &(c, t) in &kept {
        joint[[ci[&c], ti[t]]] += 1;
    }
    let csize: Vec<usize> = joint.rows().into_iter().map(|r| r.sum()).collect();
    let tsize: Vec<usize> = joint.columns().into_iter().map(|c| c.sum()).collect();
    let f1 = Array2::from_shape_fn(joint.dim(), |(c, t)| dice(joint[[c, t]], csize[c], tsize[t]));
    let assignment = hungarian(&f1.mapv(|v| 1.0 - v))?;

    let mut per_cluster = Vec::with_capacity(clusters.len());
    let (mut covered, mut accurate) = (0usize, 0usize);
    for (c, &label) in clusters.iter().enumerate() {
        let mapped = assignment.row_to_col[c];
        let score = mapped.map_or(0.0, |t| f1[[c, t]]);
        let retained = mapped.is_some() && score >= f1_threshold;
        if retained {
            covered += csize[c];
            accurate += joint[[c, mapped.unwrap()]];
        }
        per_cluster.push(ClusterScore {
            cluster: label,
            topic: mapped.map(|t| topics[t].to_string()),
            f1: score,
            size: csize[c],
            retained,
        });
    }
    let n_c = per_cluster.iter().filter(|c| c.retained).count();
    let kept_pred: Vec<usize> = kept.iter().map(|k| k.0).collect();
    let kept_gold: Vec<&str> = kept.iter().map(|k| k.1).collect();
    Ok(ClusterEvalReport {
        n_c,
        c_rate: 100.0 * covered as f64 / n as f64,
        a_rate: 100.0 * accurate as f64 / n as f64,
        a_rate_retained: if covered == 0 {
            0.0
        } else {
            100.0 * accurate as f64 / covered as f64
        },
        nmi: nmi(&kept_pred, &kept_gold),
        per_cluster,
        evaluated: n,
        ignored: pred.len() - n,
        f1_threshold,
    })
}

fn entropy(counts: impl Iterator<Item = usize>, n: f64) -> f64 {
    counts
        .filter(|&c| c > 0)
        .map(|c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// Normalized mutual information `2 I(X;Y) / (H(X) + H(Y))` in nats.
///
/// Two single-cluster partitions score 1.
pub fn nmi<A: Eq + Hash, B: Eq + Hash>(a: &[A], b: &[B]) -> f64 {
    assert_eq!(a.len(), b.len(), "partitions must cover the same items");
    let n = a.len();
    if n == 0 {
        return 0.0;
    }
    let mut ca: HashMap<&A, usize> = HashMap::new();
    let mut cb: HashMap<&B, usize> = HashMap::new();
    let mut joint: HashMap<(&A, &B), usize> = HashMap::new();
    for (x, y) in a.iter().zip(b) {
        *ca.entry(x).or_default() += 1;
        *cb.entry(y).or_default() += 1;
        *joint.entry((x, y)).or_default() += 1;
    }
    let nf = n as f64;
    let ha = entropy(ca.values().copied(), nf);
    let hb = entropy(cb.values().copied(), nf);
    if ha + hb == 0.0 {
        return 1.0;
    }
    // sum in a fixed order so the result does not depend on hashing
    let mut terms: Vec<f64> = joint
        .iter()
        .map(|((x, y), &nxy)| {
            let pxy = nxy as f64 / nf;
            pxy * (nxy as f64 * nf / (ca[x] as f64 * cb[y] as f64)).ln()
        })
        .collect();
    terms.sort_by(f64::total_cmp);
    let mi: f64 = terms.iter().sum();
    (2.0 * mi / (ha + hb)).clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn topics(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn perfect_clustering() {
        let r = cluster_metrics(&[2, 2, 0, 0, 1], &topics(&["a", "a", "b", "b", "c"]), 0.25).unwrap();
        assert_eq!((r.n_c, r.c_rate, r.a_rate), (3, 100.0, 100.0));
        assert!((r.nmi - 1.0).abs() < 1e-12);
        assert_eq!(r.mapping()[&2], "a");
    }

    #[test]
    fn single_cluster_two_topics() {
        let gold = topics(&["a", "a", "a", "a", "a", "b", "b", "b", "b", "b"]);
        let r = cluster_metrics(&[0; 10], &gold, 0.25).unwrap();
        assert_eq!(r.n_c, 1);
        assert_eq!(r.c_rate, 100.0);
        assert_eq!(r.a_rate, 50.0);
        assert!((r.per_cluster[0].f1 - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn weak_cluster_excluded() {
        // cluster 0: 8 "a" + 8 "c"; cluster 1: 6 "b"; cluster 2: 1 "c".
        // Topic c has 9 members, so cluster 2's best F1 is 2/(1+9) = 0.2.
        let mut pred = vec![0; 8];
        let mut gold = topics(&["a"; 8]);
        pred.extend(vec![0; 8]);
        gold.extend(topics(&["c"; 8]));
        pred.extend(vec![1; 6]);
        gold.extend(topics(&["b"; 6]));
        pred.push(2);
        gold.push("c".into());
        let r = cluster_metrics(&pred, &gold, 0.25).unwrap();
        let c2 = r.per_cluster.iter().find(|c| c.cluster == 2).unwrap();
        assert_eq!(c2.topic.as_deref(), Some("c"));
        assert!((c2.f1 - 0.2).abs() < 1e-12);
        assert!(!c2.retained);
        assert_eq!(r.n_c, 2);
        // 22 segments in clusters 0 and 1, 14 of them on their mapped topic
        assert!((r.c_rate - 100.0 * 22.0 / 23.0).abs() < 1e-12);
        assert!((r.a_rate - 100.0 * 14.0 / 23.0).abs() < 1e-12);
    }

    #[test]
    fn ignore_topic_skipped() {
        let r = cluster_metrics(&[0, 0, 1], &topics(&["a", "a", IGNORE_TOPIC]), 0.25).unwrap();
        assert_eq!((r.evaluated, r.ignored), (2, 1));
        assert!(cluster_metrics(&[0], &topics(&[IGNORE_TOPIC]), 0.25).is_err());
        assert!(cluster_metrics(&[0, 1], &topics(&["a"]), 0.25).is_err());
    }

    #[test]
    fn nmi_examples() {
        assert!((nmi(&[0, 0, 1, 1, 2], &[5, 5, 3, 3, 9]) - 1.0).abs() < 1e-12);
        assert_eq!(nmi(&[0, 0, 0, 0], &[0, 1, 0, 1]), 0.0);
        assert!(nmi(&[0, 0, 1, 1], &[0, 1, 0, 1]).abs() < 1e-12);
        assert_eq!(nmi(&[1, 1], &[4, 4]), 1.0);
    }

    proptest! {
        #[test]
        fn rates_ordered(pred in prop::collection::vec(0usize..4, 1..40), seed in 0usize..1000) {
            let gold: Vec<String> = pred.iter().enumerate().map(|(i, _)| format!("t{}", (i * 7 + seed) % 3)).collect();
            let r = cluster_metrics(&pred, &gold, 0.25).unwrap();
            prop_assert!(r.a_rate <= r.c_rate + 1e-12);
            prop_assert!(r.c_rate <= 100.0);
            prop_assert!(r.n_c <= 4);
        }

        #[test]
        fn nmi_symmetric_and_label_invariant(a in prop::collection::vec(0usize..4, 1..30), shift in 1usize..10) {
            let b: Vec<usize> = a.iter().enumerate().map(|(i, x)| (x + i) % 3).collect();
            let v = nmi(&a, &b);
            prop_assert!((v - nmi(&b, &a)).abs() < 1e-12);
            let relabeled: Vec<usize> = a.iter().map(|x| x * 31 + shift).collect();
            prop_assert!((v - nmi(&relabeled, &b)).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&v));
        }
    }
}

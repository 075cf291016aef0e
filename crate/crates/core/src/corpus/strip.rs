use log::warn;

use super::{Dialogue, Utterance};
use crate::segment::Segmentation;

/// Case-insensitive utterance patterns. A trailing `*` turns a pattern into
/// a prefix match; otherwise the trimmed utterance must equal it.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Stoplist {
    patterns: Vec<(String, bool)>,
}

impl Stoplist {
    pub fn new<I, S>(patterns: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let patterns = patterns
            .into_iter()
            .filter_map(|p| {
                let p = p.as_ref().trim().to_lowercase();
                match p.strip_suffix('*') {
                    Some(prefix) => Some((prefix.to_string(), true)),
                    None if p.is_empty() => None,
                    None => Some((p, false)),
                }
            })
            .collect();
        Self { patterns }
    }

    pub fn is_empty(&self) -> bool {
        self.patterns.is_empty()
    }

    pub fn matches(&self, text: &str) -> bool {
        let text = text.trim().to_lowercase();
        self.patterns.iter().any(|(p, prefix)| {
            if *prefix {
                text.starts_with(p.as_str())
            } else {
                text == *p
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Stripped {
    pub dialogue: Dialogue,
    /// Original 1-based indices of matching utterances kept so that their
    /// segment would not vanish.
    pub forced_keeps: Vec<usize>,
}

/// Removes utterances matching `stoplist` and re-indexes gold boundaries.
///
/// A segment never disappears: when every utterance of a segment matches,
/// its last utterance is kept and reported in [`Stripped::forced_keeps`].
pub fn strip_redundant(d: &Dialogue, stoplist: &Stoplist) -> Stripped {
    if stoplist.is_empty() {
        return Stripped {
            dialogue: d.clone(),
            forced_keeps: vec![],
        };
    }
    let spans = d
        .gold_segmentation()
        .unwrap_or_else(|| Segmentation::single(d.len()))
        .spans();

    let mut utterances: Vec<Utterance> = Vec::with_capacity(d.len());
    let mut boundaries = Vec::new();
    let mut forced_keeps = Vec::new();
    for (seg_idx, &(start, end)) in spans.iter().enumerate() {
        let seg_start = utterances.len() + 1;
        let keep: Vec<usize> = (start..=end)
            .filter(|&i| !stoplist.matches(&d.utterances[i - 1].text))
            .collect();
        if keep.is_empty() {
            warn!(
                "dialogue {}: every utterance of segment {}..={} is redundant; keeping utterance {}",
                d.id, start, end, end
            );
            forced_keeps.push(end);
            utterances.push(d.utterances[end - 1].clone());
        } else {
            utterances.extend(keep.iter().map(|&i| d.utterances[i - 1].clone()));
        }
        if seg_idx > 0 {
            boundaries.push(seg_start);
        }
    }

    let dialogue = Dialogue {
        id: d.id.clone(),
        utterances,
        gold_boundaries: d.gold_boundaries.as_ref().map(|_| boundaries),
        gold_topics: d.gold_topics.clone(),
    };
    Stripped {
        dialogue,
        forced_keeps,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d(texts: &[&str], bounds: Vec<usize>) -> Dialogue {
        Dialogue::new(
            "x",
            texts.iter().map(|t| Utterance::new("s", *t)).collect(),
        )
        .with_gold(bounds, None)
    }

    #[test]
    fn pattern_semantics() {
        let s = Stoplist::new(["thanks", "bye*"]);
        assert!(s.matches("  Thanks "));
        assert!(!s.matches("thanks a lot"));
        assert!(s.matches("Bye-bye"));
        assert!(s.matches("bye"));
        assert!(!s.matches("goodbye"));
    }

    #[test]
    fn no_match_is_identity() {
        let x = d(&["a", "b", "c"], vec![2]);
        let out = strip_redundant(&x, &Stoplist::new(["thanks"]));
        assert_eq!(out.dialogue, x);
        assert!(out.forced_keeps.is_empty());
    }

    #[test]
    fn boundary_reindexed_after_removal() {
        let x = d(&["a", "thanks", "c", "d", "e"], vec![4]);
        let out = strip_redundant(&x, &Stoplist::new(["thanks"]));
        assert_eq!(out.dialogue.len(), 4);
        assert_eq!(out.dialogue.gold_boundaries, Some(vec![3]));
    }

    #[test]
    fn lone_redundant_segment_survives() {
        let x = d(&["a", "b", "bye-bye"], vec![3]);
        let out = strip_redundant(&x, &Stoplist::new(["bye*"]));
        assert_eq!(out.dialogue.len(), 3);
        assert_eq!(out.dialogue.gold_boundaries, Some(vec![3]));
        assert_eq!(out.forced_keeps, vec![3]);
    }
}

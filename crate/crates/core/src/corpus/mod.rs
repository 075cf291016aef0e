//! Dialogues, their gold annotations, and corpus construction.
//!
//! A transition point (boundary) is the 1-based index of the first utterance
//! of a new segment, so a dialogue of `n` utterances has boundaries in
//! `2..=n`.

mod io;
mod strip;
mod synth;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::segment::Segmentation;

pub use io::{load_dialogues, read_dialogues, save_dialogues, write_dialogues};
pub use strip::{strip_redundant, Stoplist, Stripped};
pub use synth::{single_topic_pools, synth_concat, synth_concat_with_sources, SourceRef, SynthSpec, Synthesized};

/// Gold topic label marking a segment that is excluded from clustering evaluation.
pub const IGNORE_TOPIC: &str = "ignore";

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: malformed JSON: {source}")]
    Json {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("dialogue {id:?}: {field}: {reason}")]
    Invalid {
        id: String,
        field: &'static str,
        reason: String,
    },
    #[error("synthesis: {0}")]
    Synth(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Utterance {
    pub speaker: String,
    pub text: String,
}

impl Utterance {
    pub fn new(speaker: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            speaker: speaker.into(),
            text: text.into(),
        }
    }
}

/// An ordered run of utterances with optional gold segmentation and topics.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dialogue {
    pub id: String,
    pub utterances: Vec<Utterance>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_boundaries: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_topics: Option<Vec<String>>,
}

impl Dialogue {
    pub fn new(id: impl Into<String>, utterances: Vec<Utterance>) -> Self {
        Self {
            id: id.into(),
            utterances,
            gold_boundaries: None,
            gold_topics: None,
        }
    }

    pub fn with_gold(mut self, boundaries: Vec<usize>, topics: Option<Vec<String>>) -> Self {
        self.gold_boundaries = Some(boundaries);
        self.gold_topics = topics;
        self
    }

    pub fn len(&self) -> usize {
        self.utterances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utterances.is_empty()
    }

    /// Texts of utterances `start..=end` (1-based, inclusive) joined by a space.
    pub fn span_text(&self, start: usize, end: usize) -> String {
        join_texts(&self.utterances[start - 1..end])
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        let invalid = |field, reason: String| CorpusError::Invalid {
            id: self.id.clone(),
            field,
            reason,
        };
        let n = self.utterances.len();
        if n == 0 {
            return Err(invalid("utterances", "dialogue has no utterances".into()));
        }
        for (i, u) in self.utterances.iter().enumerate() {
            if u.text.trim().is_empty() {
                return Err(invalid(
                    "utterances",
                    format!("utterance {} has empty text", i + 1),
                ));
            }
        }
        if let Some(bounds) = &self.gold_boundaries {
            for w in bounds.windows(2) {
                if w[0] == w[1] {
                    return Err(invalid(
                        "gold_boundaries",
                        format!("duplicate boundary {}", w[0]),
                    ));
                }
                if w[0] > w[1] {
                    return Err(invalid(
                        "gold_boundaries",
                        format!("boundaries not sorted ({} before {})", w[0], w[1]),
                    ));
                }
            }
            if let Some(&b) = bounds.iter().find(|&&b| b < 2 || b > n) {
                return Err(invalid(
                    "gold_boundaries",
                    format!("boundary {b} outside 2..={n}"),
                ));
            }
        }
        if let Some(topics) = &self.gold_topics {
            let segments = self.gold_boundaries.as_ref().map_or(1, |b| b.len() + 1);
            if topics.len() != segments {
                return Err(invalid(
                    "gold_topics",
                    format!(
                        "{} topics given for {} gold segments",
                        topics.len(),
                        segments
                    ),
                ));
            }
        }
        Ok(())
    }

    /// Gold segmentation, if boundaries are annotated.
    pub fn gold_segmentation(&self) -> Option<Segmentation> {
        self.gold_boundaries
            .as_ref()
            .and_then(|b| Segmentation::new(self.len(), b.clone()).ok())
    }

    /// Gold topic of every utterance (1-based index `i` at position `i - 1`).
    pub fn utterance_topics(&self) -> Option<Vec<&str>> {
        let seg = self
            .gold_segmentation()
            .or_else(|| Segmentation::new(self.len(), vec![]).ok())?;
        let topics = self.gold_topics.as_ref()?;
        let mut out = Vec::with_capacity(self.len());
        for ((start, end), topic) in seg.spans().into_iter().zip(topics) {
            out.extend(std::iter::repeat_n(topic.as_str(), end - start + 1));
        }
        Some(out)
    }
}

pub(crate) fn join_texts(utterances: &[Utterance]) -> String {
    let mut out = String::new();
    for u in utterances {
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(u.text.trim());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dialogue(n: usize) -> Dialogue {
        let utts = (0..n)
            .map(|i| Utterance::new("A", format!("utterance {i}")))
            .collect();
        Dialogue::new("d", utts)
    }

    #[test]
    fn unsorted_boundaries_rejected() {
        let d = dialogue(6).with_gold(vec![5, 3], None);
        let err = d.validate().unwrap_err().to_string();
        assert!(err.contains("boundaries not sorted"), "{err}");
        assert!(err.contains("\"d\""));
    }

    #[test]
    fn boundary_range_and_duplicates() {
        assert!(dialogue(4).with_gold(vec![1], None).validate().is_err());
        assert!(dialogue(4).with_gold(vec![5], None).validate().is_err());
        assert!(dialogue(4).with_gold(vec![3, 3], None).validate().is_err());
        assert!(dialogue(4).with_gold(vec![2, 4], None).validate().is_ok());
    }

    #[test]
    fn topic_count_must_match_segments() {
        let d = dialogue(6).with_gold(vec![3], Some(vec!["a".into()]));
        let err = d.validate().unwrap_err();
        assert!(matches!(err, CorpusError::Invalid { field: "gold_topics", .. }));
        let ok = dialogue(6).with_gold(vec![3], Some(vec!["a".into(), "b".into()]));
        ok.validate().unwrap();
    }

    #[test]
    fn blank_text_rejected() {
        let mut d = dialogue(2);
        d.utterances[1].text = "  \t".into();
        assert!(d.validate().is_err());
    }

    #[test]
    fn utterance_topics_follow_spans() {
        let d = dialogue(5).with_gold(vec![3], Some(vec!["a".into(), "b".into()]));
        assert_eq!(d.utterance_topics().unwrap(), ["a", "a", "b", "b", "b"]);
    }
}

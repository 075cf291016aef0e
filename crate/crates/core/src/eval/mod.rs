//! Evaluation: cluster/topic mapping, coverage rates, NMI, end-to-end F1
//! and response-selection ranking metrics.
//!
//! Coverage (`C_rate`) and accuracy (`A_rate`) are percentages of *all*
//! evaluated segments, so clusters dropped by the F1 filter count against
//! both. Accuracy relative to the retained segments is reported alongside.

mod clustering;
mod e2e;
mod hungarian;
mod ranking;

use thiserror::Error;

pub use clustering::{cluster_metrics, nmi, ClusterEvalReport, ClusterScore};
pub use e2e::{e2e_f1, E2eDialogue, E2eReport, TopicF1};
pub use hungarian::{hungarian, Assignment};
pub use ranking::{ranked_labels, read_ranked, rs_metrics, Candidate, RankedCandidates, RecallAt, RsReport};

pub const DEFAULT_F1_THRESHOLD: f64 = 0.25;
pub const DEFAULT_OVERLAP_THRESHOLD: f64 = 0.5;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("{pred} predictions for {gold} gold labels")]
    LengthMismatch { pred: usize, gold: usize },
    #[error("nothing to evaluate: {0}")]
    Empty(String),
    #[error("non-finite or invalid value: {0}")]
    NonFinite(String),
    #[error("{0}")]
    Mismatch(String),
    #[error("read error: {0}")]
    Io(String),
    #[error("line {line}: {source}")]
    Json {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
}

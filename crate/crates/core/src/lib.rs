//! Topic-aware dialogue processing.
//!
//! The crate is organized along the pipeline it implements:
//!
//! - [`corpus`]: the dialogue data model, JSONL ingestion and synthetic
//!   multi-topic corpora built by concatenating single-topic dialogues.
//! - [`embed`]: pluggable sentence encoders (averaged word vectors, term
//!   frequencies, a remote HTTP embedding service) and lexical statistics.
//! - [`segment`]: unsupervised topic-shift segmentation, the TextTiling
//!   baseline and segmentation metrics (MAE, WindowDiff, boundary F1).
//! - [`sif`]: smooth-inverse-frequency segment embeddings with common
//!   component removal.
//! - [`cluster`]: a stacked autoencoder, k-means and DEC-style self-training
//!   with a Student's t soft assignment.
//! - [`eval`]: Hungarian cluster/topic mapping, coverage rates, NMI,
//!   end-to-end F1 and response-selection ranking metrics.
//! - [`tadam`]: a desk-scale topic-aware dual-attention matching network
//!   with an analytic backward pass.
//! - [`pipeline`]: configuration and the staged segment → embed → cluster →
//!   evaluate orchestration used by the `tsk` binary.
//!
//! A guide with worked examples lives in the `book/` directory of the
//! repository.

// `!(x > 0.0)` is used on purpose: it rejects NaN along with the bad range.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod artifact;
pub mod cluster;
pub mod corpus;
pub mod embed;
pub mod eval;
pub mod pipeline;
pub mod segment;
pub mod sif;
pub mod tadam;
pub mod toy;

pub use corpus::{Dialogue, Utterance};
pub use embed::{cosine, EncoderSpec, FreqTable, Tokenizer, VectorTable};
pub use segment::{SegParams, Segmentation};

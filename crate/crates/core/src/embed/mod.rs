//! Sentence encoders and lexical resources.
//!
//! Every encoder maps a text to a dense vector. Three kinds exist:
//!
//! - [`EncoderSpec::MeanWordVector`]: arithmetic mean of the word vectors of
//!   in-vocabulary tokens. Out-of-vocabulary tokens are skipped and an
//!   all-OOV text encodes to the zero vector.
//! - [`EncoderSpec::TermFrequency`]: raw token counts over a fixed vocabulary.
//! - [`EncoderSpec::Remote`]: vectors computed by an HTTP embedding service,
//!   returned verbatim.

mod freq;
mod remote;
mod tokenize;
mod vectors;

use std::sync::Arc;

use log::warn;
use thiserror::Error;

pub use freq::{word_frequencies, word_frequencies_from_path, FreqTable, Vocabulary};
pub use remote::{RemoteConfig, RemoteEncoder};
pub use tokenize::Tokenizer;
pub use vectors::{load_word_vectors, read_word_vectors, write_word_vectors, LoadReport, VectorTable};

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("word vector file is empty")]
    EmptyVectors,
    #[error("line {line}: expected {expected} values, found {found} ({bad_lines} bad lines, tolerance {tolerance})")]
    BadVectorLine {
        line: usize,
        expected: usize,
        found: usize,
        bad_lines: usize,
        tolerance: usize,
    },
    #[error("empty corpus: no tokens to count")]
    EmptyCorpus,
    #[error("vector length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("encoder dimension {got} does not match expected {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("remote encoder failed after {attempts} attempts (status {status:?}): {message}")]
    Remote {
        status: Option<u16>,
        attempts: u32,
        message: String,
    },
    #[error("remote encoder protocol violation: {0}")]
    Protocol(String),
}

impl EmbedError {
    /// Transport and status failures may succeed on a later attempt.
    pub fn is_retriable(&self) -> bool {
        matches!(self, EmbedError::Remote { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EncoderKind {
    MeanWordVector,
    TermFrequency,
    Remote,
}

/// A configured sentence encoder together with its resources.
#[derive(Debug, Clone)]
pub enum EncoderSpec {
    MeanWordVector {
        table: Arc<VectorTable>,
        tokenizer: Tokenizer,
    },
    TermFrequency {
        vocab: Arc<Vocabulary>,
        tokenizer: Tokenizer,
    },
    Remote {
        client: RemoteEncoder,
        expected_dim: Option<usize>,
    },
}

impl EncoderSpec {
    pub fn mean_word_vector(table: VectorTable, tokenizer: Tokenizer) -> Self {
        EncoderSpec::MeanWordVector {
            table: Arc::new(table),
            tokenizer,
        }
    }

    pub fn term_frequency(vocab: Vocabulary, tokenizer: Tokenizer) -> Self {
        EncoderSpec::TermFrequency {
            vocab: Arc::new(vocab),
            tokenizer,
        }
    }

    pub fn kind(&self) -> EncoderKind {
        match self {
            EncoderSpec::MeanWordVector { .. } => EncoderKind::MeanWordVector,
            EncoderSpec::TermFrequency { .. } => EncoderKind::TermFrequency,
            EncoderSpec::Remote { .. } => EncoderKind::Remote,
        }
    }

    /// Tokenizer used for the local encoders; remote encoders tokenize
    /// server-side, so the default tokenizer stands in for callers that need
    /// a token stream (TextTiling pseudo-sentences).
    pub fn tokenizer(&self) -> Tokenizer {
        match self {
            EncoderSpec::MeanWordVector { tokenizer, .. }
            | EncoderSpec::TermFrequency { tokenizer, .. } => *tokenizer,
            EncoderSpec::Remote { .. } => Tokenizer::default(),
        }
    }

    pub fn dim(&self) -> Option<usize> {
        match self {
            EncoderSpec::MeanWordVector { table, .. } => Some(table.dim()),
            EncoderSpec::TermFrequency { vocab, .. } => Some(vocab.len()),
            EncoderSpec::Remote { expected_dim, .. } => *expected_dim,
        }
    }

    pub fn encode(&self, text: &str) -> Result<Vec<f64>, EmbedError> {
        match self {
            EncoderSpec::MeanWordVector { table, tokenizer } => {
                let (v, found) = mean_word_vector(text, table, *tokenizer);
                if !found {
                    warn!("no in-vocabulary tokens in {:?}; encoding as zero vector", truncate(text, 40));
                }
                Ok(v)
            }
            EncoderSpec::TermFrequency { vocab, tokenizer } => {
                Ok(vocab.count_vector(&tokenizer.tokenize(text)))
            }
            EncoderSpec::Remote { .. } => {
                let mut out = self.encode_batch(&[text.to_string()])?;
                Ok(out.pop().unwrap_or_default())
            }
        }
    }

    /// Encodes several texts; order is preserved.
    pub fn encode_batch(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, EmbedError> {
        match self {
            EncoderSpec::Remote {
                client,
                expected_dim,
            } => {
                let vectors = client.encode_batch(texts)?;
                if let (Some(expected), Some(first)) = (expected_dim, vectors.first()) {
                    if first.len() != *expected {
                        return Err(EmbedError::DimensionMismatch {
                            expected: *expected,
                            got: first.len(),
                        });
                    }
                }
                Ok(vectors)
            }
            EncoderSpec::MeanWordVector { table, tokenizer } => {
                // one warning per batch rather than one per text
                let mut oov: Vec<&str> = Vec::new();
                let out = texts
                    .iter()
                    .map(|t| {
                        let (v, found) = mean_word_vector(t, table, *tokenizer);
                        if !found {
                            oov.push(t);
                        }
                        v
                    })
                    .collect();
                if let Some(first) = oov.first() {
                    warn!(
                        "{} of {} texts have no in-vocabulary tokens (first: {:?}); encoded as zero vectors",
                        oov.len(),
                        texts.len(),
                        truncate(first, 40)
                    );
                }
                Ok(out)
            }
            _ => texts.iter().map(|t| self.encode(t)).collect(),
        }
    }
}

/// The mean and whether any token was in the vocabulary.
fn mean_word_vector(text: &str, table: &VectorTable, tokenizer: Tokenizer) -> (Vec<f64>, bool) {
    let mut sum = vec![0.0; table.dim()];
    let mut count = 0usize;
    for token in tokenizer.tokenize(text) {
        if let Some(v) = table.get(&token) {
            for (s, x) in sum.iter_mut().zip(v) {
                *s += x;
            }
            count += 1;
        }
    }
    if count == 0 {
        return (sum, false);
    }
    let inv = 1.0 / count as f64;
    sum.iter_mut().for_each(|s| *s *= inv);
    (sum, true)
}

fn truncate(text: &str, max: usize) -> &str {
    match text.char_indices().nth(max) {
        Some((i, _)) => &text[..i],
        None => text,
    }
}

/// Cosine similarity clamped to `[-1, 1]`; zero when either vector has zero norm.
pub fn cosine(u: &[f64], v: &[f64]) -> Result<f64, EmbedError> {
    if u.len() != v.len() {
        return Err(EmbedError::LengthMismatch {
            left: u.len(),
            right: v.len(),
        });
    }
    let (mut dot, mut nu, mut nv) = (0.0, 0.0, 0.0);
    for (a, b) in u.iter().zip(v) {
        dot += a * b;
        nu += a * a;
        nv += b * b;
    }
    if nu == 0.0 || nv == 0.0 {
        return Ok(0.0);
    }
    Ok((dot / (nu.sqrt() * nv.sqrt())).clamp(-1.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn table() -> VectorTable {
        VectorTable::from_entries(
            2,
            [("a", vec![2.0, 0.0]), ("b", vec![0.0, 2.0])]
                .into_iter()
                .map(|(k, v)| (k.to_string(), v)),
        )
        .unwrap()
    }

    #[test]
    fn mean_of_word_vectors() {
        let enc = EncoderSpec::mean_word_vector(table(), Tokenizer::WhitespaceLower);
        assert_eq!(enc.encode("a b").unwrap(), vec![1.0, 1.0]);
        assert_eq!(enc.encode("A, b!").unwrap(), vec![1.0, 1.0]);
        assert_eq!(enc.encode("zzz qqq").unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn term_frequency_counts() {
        let vocab = Vocabulary::new(["a", "b", "c"]);
        let enc = EncoderSpec::term_frequency(vocab, Tokenizer::WhitespaceLower);
        assert_eq!(enc.encode("a b a").unwrap(), vec![2.0, 1.0, 0.0]);
    }

    #[test]
    fn cosine_cases() {
        assert_eq!(cosine(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        let c = cosine(&[1.0, 0.0], &[1.0, 1.0]).unwrap();
        assert!((c - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
        assert_eq!(cosine(&[0.0, 0.0], &[1.0, 1.0]).unwrap(), 0.0);
        assert!(cosine(&[1.0], &[1.0, 2.0]).is_err());
    }

    proptest! {
        #[test]
        fn cosine_self_is_one(v in prop::collection::vec(-10.0f64..10.0, 1..12)) {
            prop_assume!(v.iter().any(|x| x.abs() > 1e-6));
            prop_assert!((cosine(&v, &v).unwrap() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn cosine_symmetric_and_scale_invariant(
            pair in (1usize..10).prop_flat_map(|n| (
                prop::collection::vec(-5.0f64..5.0, n),
                prop::collection::vec(-5.0f64..5.0, n),
            )),
            scale in 0.01f64..100.0,
        ) {
            let (u, v) = pair;
            let c = cosine(&u, &v).unwrap();
            prop_assert_eq!(c, cosine(&v, &u).unwrap());
            let su: Vec<f64> = u.iter().map(|x| x * scale).collect();
            prop_assert!((cosine(&su, &v).unwrap() - c).abs() < 1e-12);
        }

        #[test]
        fn mean_vector_permutation_invariant(mut order in Just(vec!["a", "b", "a", "zz", "b", "b"]).prop_shuffle()) {
            let enc = EncoderSpec::mean_word_vector(table(), Tokenizer::WhitespaceLower);
            let base = enc.encode("a b a zz b b").unwrap();
            order.reverse();
            let shuffled = enc.encode(&order.join(" ")).unwrap();
            for (x, y) in base.iter().zip(&shuffled) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }
    }
}

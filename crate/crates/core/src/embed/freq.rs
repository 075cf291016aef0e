use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use super::{EmbedError, Tokenizer};

/// Token counts over a corpus.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FreqTable {
    counts: BTreeMap<String, u64>,
    total: u64,
}

impl FreqTable {
    pub fn from_tokens<I, S>(tokens: I) -> Result<Self, EmbedError>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut counts: BTreeMap<String, u64> = BTreeMap::new();
        let mut total = 0;
        for t in tokens {
            *counts.entry(t.as_ref().to_string()).or_default() += 1;
            total += 1;
        }
        if total == 0 {
            return Err(EmbedError::EmptyCorpus);
        }
        Ok(Self { counts, total })
    }

    pub fn count(&self, token: &str) -> u64 {
        self.counts.get(token).copied().unwrap_or(0)
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    /// Relative frequency `count / total`; 0 for unseen tokens.
    pub fn freq(&self, token: &str) -> f64 {
        self.count(token) as f64 / self.total as f64
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, u64)> {
        self.counts.iter().map(|(k, &v)| (k.as_str(), v))
    }
}

/// Token frequencies over `texts` under `tokenizer`.
pub fn word_frequencies<I, S>(texts: I, tokenizer: Tokenizer) -> Result<FreqTable, EmbedError>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    FreqTable::from_tokens(
        texts
            .into_iter()
            .flat_map(|t| tokenizer.tokenize(t.as_ref())),
    )
}

/// Token frequencies of a plain-text corpus file.
pub fn word_frequencies_from_path(path: &Path, tokenizer: Tokenizer) -> Result<FreqTable, EmbedError> {
    let text = fs::read_to_string(path).map_err(|source| EmbedError::Io {
        path: path.display().to_string(),
        source,
    })?;
    word_frequencies(text.lines(), tokenizer)
}

/// Fixed ordered vocabulary for term-frequency vectors.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Keeps the first occurrence of every token, in order.
    pub fn new<I, S>(tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut vocab = Self::default();
        for t in tokens {
            let t = t.as_ref();
            if !vocab.index.contains_key(t) {
                vocab.index.insert(t.to_string(), vocab.tokens.len());
                vocab.tokens.push(t.to_string());
            }
        }
        vocab
    }

    /// Sorted vocabulary of every token in `texts`.
    pub fn from_texts<I, S>(texts: I, tokenizer: Tokenizer) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut all: Vec<String> = texts
            .into_iter()
            .flat_map(|t| tokenizer.tokenize(t.as_ref()))
            .collect();
        all.sort_unstable();
        all.dedup();
        Self::new(all)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn index_of(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn count_vector(&self, tokens: &[String]) -> Vec<f64> {
        let mut v = vec![0.0; self.tokens.len()];
        for t in tokens {
            if let Some(i) = self.index_of(t) {
                v[i] += 1.0;
            }
        }
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn relative_frequencies() {
        let f = word_frequencies(["a a b"], Tokenizer::WhitespaceLower).unwrap();
        assert_eq!(f.freq("a"), 2.0 / 3.0);
        assert_eq!(f.freq("b"), 1.0 / 3.0);
        assert_eq!(f.freq("c"), 0.0);
        assert_eq!(f.total(), 3);
    }

    #[test]
    fn single_token() {
        let f = FreqTable::from_tokens(["x"]).unwrap();
        assert_eq!(f.freq("x"), 1.0);
    }

    #[test]
    fn empty_corpus_rejected() {
        assert!(matches!(
            word_frequencies(["  ", ""], Tokenizer::WhitespaceLower),
            Err(EmbedError::EmptyCorpus)
        ));
    }

    #[test]
    fn zipf_counts_match_recount() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let weights: Vec<f64> = (1..=50).map(|r| 1.0 / r as f64).collect();
        let norm: f64 = weights.iter().sum();
        let tokens: Vec<String> = (0..1000)
            .map(|_| {
                let mut u = rng.random::<f64>() * norm;
                let mut r = 0;
                while u > weights[r] && r + 1 < weights.len() {
                    u -= weights[r];
                    r += 1;
                }
                format!("w{r}")
            })
            .collect();
        let f = FreqTable::from_tokens(&tokens).unwrap();
        assert_eq!(f.total(), 1000);
        // independent tally: sort and run-length count
        let mut sorted = tokens.clone();
        sorted.sort();
        let mut i = 0;
        while i < sorted.len() {
            let j = sorted[i..].iter().take_while(|t| **t == sorted[i]).count();
            assert_eq!(f.count(&sorted[i]), j as u64);
            i += j;
        }
        assert_eq!(f.iter().map(|(_, c)| c).sum::<u64>(), 1000);
    }
}

//! Seeded synthetic data: single-topic dialogue pools with matching word
//! vectors, Gaussian blobs for clustering, and a separable response-matching
//! task. Everything here is deterministic given its seed.

use std::collections::BTreeMap;

use ndarray::{Array1, Array2, Array3};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::corpus::{Dialogue, Utterance};
use crate::embed::{EmbedError, VectorTable};
use crate::tadam::{MatchInstance, TadamInput, TadamModel, TadamParams};

/// Words shared by every topic. They carry no topic signal.
pub const FUNCTION_WORDS: [&str; 6] = ["the", "and", "of", "to", "is", "a"];

/// Utterances that a stoplist should remove.
pub const FILLERS: [&str; 3] = ["ok", "thanks", "sure"];

#[derive(Debug, Clone, PartialEq)]
pub struct ToyTopics {
    pub topics: usize,
    pub words_per_topic: usize,
    /// Inclusive utterance count range of one source dialogue.
    pub min_utterances: usize,
    pub max_utterances: usize,
    pub words_per_utterance: usize,
    /// Function words mixed into each utterance.
    pub function_words: usize,
    /// Chance that a filler utterance is inserted after an utterance.
    pub filler_rate: f64,
    pub dialogues_per_topic: usize,
    pub seed: u64,
}

impl Default for ToyTopics {
    fn default() -> Self {
        Self {
            topics: 3,
            words_per_topic: 12,
            min_utterances: 2,
            max_utterances: 6,
            words_per_utterance: 5,
            function_words: 0,
            filler_rate: 0.0,
            dialogues_per_topic: 20,
            seed: 0,
        }
    }
}

pub fn topic_name(t: usize) -> String {
    format!("topic{t}")
}

pub fn topic_word(t: usize, j: usize) -> String {
    format!("t{t}w{j}")
}

impl ToyTopics {
    /// Single-topic dialogue pools keyed by topic name.
    pub fn pools(&self) -> BTreeMap<String, Vec<Dialogue>> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut pools = BTreeMap::new();
        for t in 0..self.topics {
            let dialogues = (0..self.dialogues_per_topic)
                .map(|i| {
                    let n = rng.random_range(self.min_utterances..=self.max_utterances);
                    let mut utterances = Vec::with_capacity(n);
                    for u in 0..n {
                        let speaker = if u % 2 == 0 { "A" } else { "B" };
                        utterances.push(Utterance::new(speaker, self.utterance(t, &mut rng)));
                        if self.filler_rate > 0.0 && rng.random_bool(self.filler_rate.min(1.0)) {
                            let filler = FILLERS.choose(&mut rng).expect("non-empty");
                            utterances.push(Utterance::new(speaker, *filler));
                        }
                    }
                    Dialogue::new(format!("{}-{i:03}", topic_name(t)), utterances)
                })
                .collect();
            pools.insert(topic_name(t), dialogues);
        }
        pools
    }

    fn utterance<R: Rng>(&self, t: usize, rng: &mut R) -> String {
        let mut words: Vec<String> = (0..self.words_per_utterance)
            .map(|_| topic_word(t, rng.random_range(0..self.words_per_topic)))
            .collect();
        for _ in 0..self.function_words {
            let w = FUNCTION_WORDS.choose(rng).expect("non-empty");
            let at = rng.random_range(0..=words.len());
            words.insert(at, (*w).to_string());
        }
        words.join(" ")
    }

    /// Topic words map to the standard basis vector of their topic; function
    /// words are absent, so every utterance encodes to exactly its topic
    /// direction.
    pub fn one_hot_table(&self) -> VectorTable {
        let mut table = VectorTable::new(self.topics);
        for t in 0..self.topics {
            for j in 0..self.words_per_topic {
                let mut v = vec![0.0; self.topics];
                v[t] = 1.0;
                table.insert(topic_word(t, j), v).expect("dimension matches");
            }
        }
        table
    }

    /// Topic words scatter around a random unit topic direction; function
    /// words share one common direction.
    pub fn noisy_table(&self, dim: usize, noise: f64, seed: u64) -> Result<VectorTable, EmbedError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let unit = |rng: &mut ChaCha8Rng| {
            let v: Array1<f64> = Array1::from_shape_simple_fn(dim, || StandardNormal.sample(rng));
            let n = v.dot(&v).sqrt();
            v / n
        };
        let common = unit(&mut rng);
        let mut table = VectorTable::new(dim);
        for t in 0..self.topics {
            let dir = unit(&mut rng);
            for j in 0..self.words_per_topic {
                let v = &dir + &(unit(&mut rng) * noise);
                table.insert(topic_word(t, j), v.to_vec())?;
            }
        }
        for w in FUNCTION_WORDS {
            let v = &common + &(unit(&mut rng) * noise);
            table.insert(w.to_string(), v.to_vec())?;
        }
        Ok(table)
    }
}

/// Gaussian blobs in a low-dimensional space, lifted to `d_in` dimensions by
/// a random linear map. Centers sit on a regular simplex-like layout with
/// pairwise distance at least `separation`.
#[derive(Debug, Clone, PartialEq)]
pub struct Blobs {
    pub clusters: usize,
    pub per_cluster: usize,
    pub latent_dim: usize,
    pub d_in: usize,
    pub sigma: f64,
    pub separation: f64,
    pub seed: u64,
}

impl Default for Blobs {
    fn default() -> Self {
        Self {
            clusters: 3,
            per_cluster: 100,
            latent_dim: 2,
            d_in: 10,
            sigma: 0.05,
            separation: 5.0,
            seed: 0,
        }
    }
}

impl Blobs {
    /// Points (rows, shuffled) and their blob index.
    pub fn generate(&self) -> (Array2<f64>, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        // centers on a circle in the first two latent axes
        let radius = self.separation / (2.0 * (std::f64::consts::PI / self.clusters.max(2) as f64).sin());
        let centers: Vec<Array1<f64>> = (0..self.clusters)
            .map(|c| {
                let angle = 2.0 * std::f64::consts::PI * c as f64 / self.clusters as f64;
                let mut v = Array1::zeros(self.latent_dim.max(2));
                v[0] = radius * angle.cos();
                v[1] = radius * angle.sin();
                v
            })
            .collect();
        let dim = self.latent_dim.max(2);
        let noise = Normal::new(0.0, self.sigma).expect("sigma is finite and non-negative");
        let mut rows: Vec<(Array1<f64>, usize)> = Vec::with_capacity(self.clusters * self.per_cluster);
        for (c, center) in centers.iter().enumerate() {
            for _ in 0..self.per_cluster {
                let p = center + &Array1::from_shape_simple_fn(dim, || noise.sample(&mut rng));
                rows.push((p, c));
            }
        }
        rows.shuffle(&mut rng);
        let lift = Array2::from_shape_simple_fn((dim, self.d_in), || {
            let z: f64 = StandardNormal.sample(&mut rng);
            z / (dim as f64).sqrt()
        });
        let latent = Array2::from_shape_fn((rows.len(), dim), |(i, k)| rows[i].0[k]);
        (latent.dot(&lift), rows.into_iter().map(|(_, c)| c).collect())
    }
}

/// Response-matching task: each context holds segments on distinct topics;
/// the positive response reuses words of one context segment and the
/// negative is drawn from a topic the context does not mention.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchTask {
    pub contexts: usize,
    pub topics: usize,
    pub words_per_topic: usize,
    pub min_segments: usize,
    pub max_segments: usize,
    pub segment_len: usize,
    pub response_len: usize,
    pub seed: u64,
}

impl Default for MatchTask {
    fn default() -> Self {
        Self {
            contexts: 100,
            topics: 8,
            words_per_topic: 10,
            min_segments: 2,
            max_segments: 4,
            segment_len: 5,
            response_len: 4,
            seed: 0,
        }
    }
}

impl MatchTask {
    /// Instances grouped by context, positive first.
    pub fn generate(&self) -> Vec<[MatchInstance; 2]> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut out = Vec::with_capacity(self.contexts);
        let draw = |t: usize, n: usize, rng: &mut ChaCha8Rng| -> Vec<String> {
            (0..n).map(|_| topic_word(t, rng.random_range(0..self.words_per_topic))).collect()
        };
        for c in 0..self.contexts {
            let mut order: Vec<usize> = (0..self.topics).collect();
            order.shuffle(&mut rng);
            let k = rng.random_range(self.min_segments..=self.max_segments).min(self.topics - 1);
            let (used, unused) = order.split_at(k);
            let segments: Vec<Vec<String>> = used.iter().map(|&t| draw(t, self.segment_len, &mut rng)).collect();
            let source = &segments[rng.random_range(0..k)];
            let positive: Vec<String> = (0..self.response_len)
                .map(|_| source.choose(&mut rng).expect("non-empty segment").clone())
                .collect();
            let negative = draw(unused[rng.random_range(0..unused.len())], self.response_len, &mut rng);
            let inst = |id: &str, response: Vec<String>, label| MatchInstance {
                context_id: format!("ctx{c:03}"),
                candidate_id: format!("ctx{c:03}-{id}"),
                segments: segments.clone(),
                response,
                label,
            };
            out.push([inst("pos", positive, 1), inst("neg", negative, 0)]);
        }
        out
    }

    /// Topic-direction word vectors for the task's vocabulary.
    pub fn table(&self, dim: usize, noise: f64) -> Result<VectorTable, EmbedError> {
        ToyTopics {
            topics: self.topics,
            words_per_topic: self.words_per_topic,
            ..ToyTopics::default()
        }
        .noisy_table(dim, noise, self.seed ^ 0x7461_626c)
    }
}

/// Random padded TADAM input with `present` leading segments, each holding
/// at least one token, and a non-empty response.
pub fn random_tadam_input<R: Rng>(p: &TadamParams, present: usize, rng: &mut R) -> TadamInput {
    let mut c1 = Array3::zeros((p.t, p.l, p.d));
    let mut seg_mask = Array2::from_elem((p.t, p.l), false);
    for i in 0..present.min(p.t) {
        for y in 0..rng.random_range(1..=p.l) {
            seg_mask[[i, y]] = true;
            for k in 0..p.d {
                c1[[i, y, k]] = rng.random_range(-1.0..1.0);
            }
        }
    }
    let mut r1 = Array2::zeros((p.l, p.d));
    let mut r_mask = Array1::from_elem(p.l, false);
    for u in 0..rng.random_range(1..=p.l) {
        r_mask[u] = true;
        for k in 0..p.d {
            r1[[u, k]] = rng.random_range(-1.0..1.0);
        }
    }
    TadamInput { c1, seg_mask, r1, r_mask }
}

/// Moves every trainable parameter by up to `±scale` so that zero biases and
/// unit gains stop hiding mistakes in gradient checks. The diagonal `W1` of
/// a non-bilinear model is left alone.
pub fn perturb_tadam<R: Rng>(model: &mut TadamModel, scale: f64, rng: &mut R) {
    let bilinear = model.bilinear;
    for (name, mut t) in model.tensors_mut() {
        if name == "W1" && !bilinear {
            continue;
        }
        t.mapv_inplace(|v| v + rng.random_range(-scale..scale));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::{EncoderSpec, Tokenizer};

    #[test]
    fn pools_are_deterministic_and_single_topic() {
        let spec = ToyTopics::default();
        let a = spec.pools();
        assert_eq!(a, spec.pools());
        assert_eq!(a.len(), 3);
        let enc = EncoderSpec::mean_word_vector(spec.one_hot_table(), Tokenizer::default());
        for (t, dialogues) in a.values().enumerate() {
            for d in dialogues {
                assert!((2..=6).contains(&d.len()));
                for u in &d.utterances {
                    let v = enc.encode(&u.text).unwrap();
                    assert_eq!(v.iter().position(|&x| x == 1.0), Some(t));
                }
            }
        }
    }

    #[test]
    fn fillers_and_function_words_appear_when_asked() {
        let spec = ToyTopics {
            function_words: 2,
            filler_rate: 0.5,
            ..ToyTopics::default()
        };
        let pools = spec.pools();
        let texts: Vec<&str> = pools.values().flatten().flat_map(|d| d.utterances.iter().map(|u| u.text.as_str())).collect();
        assert!(texts.iter().any(|t| FILLERS.contains(t)));
        assert!(texts.iter().any(|t| t.split(' ').any(|w| FUNCTION_WORDS.contains(&w))));
        let table = spec.noisy_table(8, 0.1, 1).unwrap();
        assert_eq!(table.len(), 3 * 12 + FUNCTION_WORDS.len());
    }

    #[test]
    fn blobs_are_separated() {
        let b = Blobs::default();
        let (x, labels) = b.generate();
        assert_eq!(x.dim(), (300, 10));
        assert_eq!(labels.iter().filter(|&&l| l == 2).count(), 100);
        assert_eq!(b.generate().0, x);
    }

    #[test]
    fn match_task_shape() {
        let task = MatchTask::default();
        let data = task.generate();
        assert_eq!(data.len(), 100);
        for [pos, neg] in &data {
            assert_eq!((pos.label, neg.label), (1, 0));
            assert!(pos.response.iter().all(|w| pos.segments.iter().any(|s| s.contains(w))));
            assert!(neg.response.iter().all(|w| !neg.segments.iter().any(|s| s.contains(w))));
        }
    }
}

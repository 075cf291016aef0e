use std::collections::BTreeMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{strip_redundant, CorpusError, Dialogue, Stoplist};

/// Recipe for a multi-topic corpus built from single-topic dialogue pools.
#[derive(Debug, Clone)]
pub struct SynthSpec {
    /// Inclusive range of source dialogues joined into one output dialogue.
    pub min_segments: usize,
    pub max_segments: usize,
    /// Topic → single-topic dialogues. Filtering out multi-topic sources is
    /// the caller's job.
    pub pools: BTreeMap<String, Vec<Dialogue>>,
    pub stoplist: Stoplist,
    pub count: usize,
    pub seed: u64,
}

impl SynthSpec {
    fn validate(&self) -> Result<(), CorpusError> {
        if self.min_segments == 0 || self.min_segments > self.max_segments {
            return Err(CorpusError::Synth(format!(
                "invalid segment range {}..={}",
                self.min_segments, self.max_segments
            )));
        }
        if self.pools.is_empty() {
            return Err(CorpusError::Synth("no topic pools".into()));
        }
        if let Some((topic, _)) = self.pools.iter().find(|(_, p)| p.is_empty()) {
            return Err(CorpusError::Synth(format!("pool {topic:?} is empty")));
        }
        if self.max_segments > 1 && self.pools.len() < 2 {
            return Err(CorpusError::Synth(
                "joining more than one source needs at least 2 distinct topics".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SourceRef {
    pub topic: String,
    pub id: String,
    /// Utterance count contributed after stoplist filtering.
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Synthesized {
    pub dialogue: Dialogue,
    pub sources: Vec<SourceRef>,
}

/// Groups dialogues whose utterances all carry one gold topic (other than
/// `ignore`) into pools keyed by that topic; everything else is dropped.
pub fn single_topic_pools(dialogues: Vec<Dialogue>) -> BTreeMap<String, Vec<Dialogue>> {
    let mut pools: BTreeMap<String, Vec<Dialogue>> = BTreeMap::new();
    for d in dialogues {
        let topic = match d.utterance_topics() {
            Some(topics) => match topics.first() {
                Some(&first) if first != super::IGNORE_TOPIC && topics.iter().all(|t| *t == first) => first.to_string(),
                _ => continue,
            },
            None => continue,
        };
        pools.entry(topic).or_default().push(d);
    }
    pools
}

pub fn synth_concat(spec: &SynthSpec) -> Result<Vec<Dialogue>, CorpusError> {
    Ok(synth_concat_with_sources(spec)?
        .into_iter()
        .map(|s| s.dialogue)
        .collect())
}

/// Joins randomly drawn single-topic dialogues; join points become gold
/// boundaries and adjacent sources always differ in topic.
pub fn synth_concat_with_sources(spec: &SynthSpec) -> Result<Vec<Synthesized>, CorpusError> {
    spec.validate()?;
    let topics: Vec<&String> = spec.pools.keys().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut out = Vec::with_capacity(spec.count);

    for idx in 0..spec.count {
        let s = rng.random_range(spec.min_segments..=spec.max_segments);
        let mut sequence: Vec<usize> = Vec::with_capacity(s);
        for _ in 0..s {
            let t = match sequence.last() {
                None => rng.random_range(0..topics.len()),
                Some(&prev) => {
                    // uniform over the other topics
                    let t = rng.random_range(0..topics.len() - 1);
                    if t >= prev {
                        t + 1
                    } else {
                        t
                    }
                }
            };
            sequence.push(t);
        }

        let mut utterances = Vec::new();
        let mut boundaries = Vec::new();
        let mut gold_topics = Vec::new();
        let mut sources = Vec::new();
        for (k, &t) in sequence.iter().enumerate() {
            let topic = topics[t];
            let pool = &spec.pools[topic];
            let source = &pool[rng.random_range(0..pool.len())];
            let single = Dialogue {
                gold_boundaries: None,
                gold_topics: None,
                ..source.clone()
            };
            let stripped = strip_redundant(&single, &spec.stoplist).dialogue;
            if k > 0 {
                boundaries.push(utterances.len() + 1);
            }
            sources.push(SourceRef {
                topic: topic.clone(),
                id: source.id.clone(),
                len: stripped.len(),
            });
            utterances.extend(stripped.utterances);
            gold_topics.push(topic.clone());
        }

        let dialogue = Dialogue {
            id: format!("synth-{idx:05}"),
            utterances,
            gold_boundaries: Some(boundaries),
            gold_topics: Some(gold_topics),
        };
        dialogue.validate()?;
        out.push(Synthesized { dialogue, sources });
    }
    Ok(out)
}

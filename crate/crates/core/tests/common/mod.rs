#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};

use tsk::corpus::{save_dialogues, synth_concat, Dialogue, Stoplist, SynthSpec};
use tsk::embed::write_word_vectors;
use tsk::pipeline::{PathsConfig, PipelineConfig};
use tsk::toy::ToyTopics;

/// Multi-topic dialogues concatenated from single-topic toy pools.
pub fn toy_corpus(toy: &ToyTopics, min_segments: usize, max_segments: usize, count: usize, seed: u64) -> Vec<Dialogue> {
    synth_concat(&SynthSpec {
        min_segments,
        max_segments,
        pools: toy.pools(),
        stoplist: Stoplist::new(Vec::<String>::new()),
        count,
        seed,
    })
    .expect("toy corpus")
}

/// The three-topic fixture used for end-to-end runs.
pub fn fixture_toy() -> ToyTopics {
    ToyTopics {
        topics: 3,
        function_words: 2,
        dialogues_per_topic: 40,
        ..ToyTopics::default()
    }
}

/// Writes the fixture corpus and word vectors into `dir`.
pub fn write_fixture(dir: &Path) -> (PathBuf, PathBuf) {
    let toy = fixture_toy();
    let dialogues = toy_corpus(&toy, 2, 4, 100, 7);
    let dpath = dir.join("dialogues.jsonl");
    save_dialogues(&dpath, &dialogues).unwrap();
    let table = toy.noisy_table(16, 0.3, 3).unwrap();
    let vpath = dir.join("vectors.txt");
    let mut buf = Vec::new();
    write_word_vectors(&mut buf, &table).unwrap();
    fs::write(&vpath, buf).unwrap();
    (dpath, vpath)
}

pub fn fixture_config(dir: &Path, out: &str) -> PipelineConfig {
    let (dialogues, vectors) = write_fixture(dir);
    PipelineConfig {
        paths: PathsConfig {
            dialogues: Some(dialogues),
            vectors: Some(vectors),
            out_dir: Some(dir.join(out)),
        },
        ..PipelineConfig::default()
    }
}

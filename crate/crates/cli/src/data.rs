//! `synth`, `segment` and `sif`.

use std::collections::BTreeSet;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;
use tsk::artifact::write_embeddings;
use tsk::corpus::{load_dialogues, save_dialogues, single_topic_pools, synth_concat, Stoplist, SynthSpec};
use tsk::embed::write_word_vectors;
use tsk::pipeline::{
    corpus_frequencies, load_segmentations, save_segmentations, segment_texts, ConfigOverrides, SegmentationReport,
};
use tsk::segment::{mean_window_diff, seg_f1, seg_mae, segment_dialogue, texttiling, Segmentation, TilingParams};
use tsk::sif::sif_embed;
use tsk::toy::{ToyTopics, FILLERS};

use crate::args::{self, EncoderArgs, SegFlags, SifFlags};
use crate::output::Output;

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// JSONL of single-topic dialogues with gold topics. Without it, toy
    /// pools are generated.
    #[arg(long, value_name = "JSONL")]
    pools: Option<PathBuf>,
    /// Output dialogues (JSONL with gold boundaries and topics).
    #[arg(long, value_name = "JSONL")]
    out: PathBuf,
    #[arg(long, default_value_t = 100)]
    count: usize,
    /// Fewest source dialogues joined into one output dialogue.
    #[arg(long, default_value_t = 2)]
    min_segments: usize,
    #[arg(long, default_value_t = 5)]
    max_segments: usize,
    /// File of patterns (one per line) for utterances to strip, such as
    /// greetings and thanks. Toy pools default to their filler words.
    #[arg(long, value_name = "FILE")]
    stoplist: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Toy pools: number of topics.
    #[arg(long, default_value_t = 3)]
    toy_topics: usize,
    /// Toy pools: dialogues per topic.
    #[arg(long, default_value_t = 20)]
    toy_per_topic: usize,
    /// Toy pools: function words mixed into every utterance.
    #[arg(long, default_value_t = 0)]
    toy_function_words: usize,
    /// Toy pools: chance of a filler utterance after each utterance.
    #[arg(long, default_value_t = 0.0)]
    toy_filler_rate: f64,
    /// Toy pools: also write matching word vectors here.
    #[arg(long, value_name = "FILE")]
    export_vectors: Option<PathBuf>,
    #[arg(long, default_value_t = 16)]
    vector_dim: usize,
    /// Spread of toy word vectors around their topic direction.
    #[arg(long, default_value_t = 0.3)]
    vector_noise: f64,
}

#[derive(Serialize)]
struct SynthReport {
    dialogues: usize,
    topics: usize,
    utterances: usize,
    mean_segments: f64,
    out: PathBuf,
    vectors: Option<PathBuf>,
}

pub fn synth(a: SynthArgs, out: Output) -> Result<()> {
    let toy = ToyTopics {
        topics: a.toy_topics,
        dialogues_per_topic: a.toy_per_topic,
        function_words: a.toy_function_words,
        filler_rate: a.toy_filler_rate,
        seed: a.seed,
        ..ToyTopics::default()
    };
    let pools = match &a.pools {
        Some(path) => {
            if a.export_vectors.is_some() {
                bail!("--export-vectors only applies to toy pools");
            }
            let pools = single_topic_pools(load_dialogues(path, true)?);
            log::info!("{}: {} topic pools", path.display(), pools.len());
            pools
        }
        None => toy.pools(),
    };
    let stoplist = match (&a.stoplist, &a.pools) {
        (Some(path), _) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            Stoplist::new(text.lines().map(str::trim).filter(|l| !l.is_empty()))
        }
        (None, None) => Stoplist::new(FILLERS),
        (None, Some(_)) => Stoplist::default(),
    };
    let dialogues = synth_concat(&SynthSpec {
        min_segments: a.min_segments,
        max_segments: a.max_segments,
        pools,
        stoplist,
        count: a.count,
        seed: a.seed,
    })?;
    save_dialogues(&a.out, &dialogues)?;
    if let Some(path) = &a.export_vectors {
        let table = toy.noisy_table(a.vector_dim, a.vector_noise, a.seed)?;
        let mut w = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
        write_word_vectors(&mut w, &table)?;
        w.flush()?;
    }
    let topics: BTreeSet<&String> = dialogues.iter().flat_map(|d| d.gold_topics.iter().flatten()).collect();
    let segments: usize = dialogues.iter().map(|d| d.gold_topics.as_ref().map_or(1, Vec::len)).sum();
    out.emit(&SynthReport {
        dialogues: dialogues.len(),
        topics: topics.len(),
        utterances: dialogues.iter().map(|d| d.len()).sum(),
        mean_segments: segments as f64 / dialogues.len().max(1) as f64,
        out: a.out,
        vectors: a.export_vectors,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Method {
    /// Greedy growth by similarity of neighbouring windows.
    Greedy,
    /// TextTiling baseline.
    Texttiling,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum TilingPreset {
    English,
    Chinese,
}

#[derive(Debug, Args)]
pub struct SegmentArgs {
    /// Dialogues JSONL.
    #[arg(long, value_name = "JSONL")]
    dialogues: PathBuf,
    /// Output segmentation JSONL: {"id", "boundaries"} per dialogue.
    #[arg(long, value_name = "JSONL")]
    out: PathBuf,
    /// Also write the greedy search's per-candidate costs here.
    #[arg(long, value_name = "JSONL")]
    trace: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Method::Greedy)]
    method: Method,
    /// TextTiling pseudo-sentence length preset.
    #[arg(long, value_enum, default_value_t = TilingPreset::English)]
    tiling: TilingPreset,
    /// Word vectors (text format: token followed by its components).
    #[arg(long, value_name = "FILE")]
    vectors: Option<PathBuf>,
    /// Worker threads [default: logical cores]
    #[arg(long)]
    jobs: Option<usize>,
    /// WindowDiff window when gold boundaries are present.
    #[arg(long, default_value_t = 4)]
    window: usize,
    #[command(flatten)]
    encoder: EncoderArgs,
    #[command(flatten)]
    seg: SegFlags,
}

#[derive(Serialize)]
struct SegmentSummary {
    dialogues: usize,
    segments: usize,
    method: &'static str,
    out: PathBuf,
    /// Present when the dialogues carry gold boundaries.
    metrics: Option<SegmentationReport>,
}

#[derive(Serialize)]
struct TraceRecord<'a> {
    id: &'a str,
    #[serde(flatten)]
    trace: tsk::segment::SegTrace,
}

pub fn segment(a: SegmentArgs, out: Output) -> Result<()> {
    let mut o = ConfigOverrides::default();
    a.encoder.apply(&mut o);
    a.seg.apply(&mut o);
    let cfg = args::resolve(&o)?;
    let dialogues = args::dialogues(&a.dialogues, false)?;
    let encoder = args::encoder(&cfg, a.vectors.as_ref(), &dialogues)?;
    let want_trace = a.trace.is_some();
    if want_trace && a.method != Method::Greedy {
        bail!("--trace is only available for the greedy method");
    }
    let tiling = match a.tiling {
        TilingPreset::English => TilingParams::english(),
        TilingPreset::Chinese => TilingParams::chinese(),
    };
    let results = args::with_jobs(a.jobs, || {
        dialogues
            .par_iter()
            .map(|d| match a.method {
                Method::Greedy => segment_dialogue(d, &encoder, &cfg.seg, want_trace),
                Method::Texttiling => texttiling(d, &encoder, &tiling).map(|s| (s, None)),
            })
            .collect::<Result<Vec<_>, _>>()
    })??;
    let (segs, traces): (Vec<Segmentation>, Vec<_>) = results.into_iter().unzip();
    save_segmentations(&a.out, &dialogues, &segs)?;
    if let Some(path) = &a.trace {
        let mut w = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
        for (d, t) in dialogues.iter().zip(traces) {
            let rec = TraceRecord {
                id: &d.id,
                trace: t.unwrap_or_default(),
            };
            serde_json::to_writer(&mut w, &rec)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
    }
    let metrics = segmentation_metrics(&dialogues, &segs, a.window)?;
    out.emit(&SegmentSummary {
        dialogues: dialogues.len(),
        segments: segs.iter().map(Segmentation::num_segments).sum(),
        method: match a.method {
            Method::Greedy => "greedy",
            Method::Texttiling => "texttiling",
        },
        out: a.out,
        metrics,
    })
}

/// MAE, WindowDiff and boundary scores against gold, if every dialogue has it.
pub fn segmentation_metrics(
    dialogues: &[tsk::Dialogue],
    segs: &[Segmentation],
    window: usize,
) -> Result<Option<SegmentationReport>> {
    let Some(golds) = dialogues
        .iter()
        .map(|d| d.gold_segmentation().map(|g| (d.id.clone(), g)))
        .collect::<Option<Vec<_>>>()
    else {
        return Ok(None);
    };
    let preds: Vec<(String, Segmentation)> = dialogues.iter().map(|d| d.id.clone()).zip(segs.iter().cloned()).collect();
    let (window_diff, too_short) = mean_window_diff(&preds, &golds, window)?;
    Ok(Some(SegmentationReport {
        mae: seg_mae(&preds, &golds)?,
        window_diff,
        window,
        too_short,
        boundaries: seg_f1(&preds, &golds)?,
    }))
}

#[derive(Debug, Args)]
pub struct SifArgs {
    /// Dialogues JSONL; word frequencies are counted over all utterances.
    #[arg(long, value_name = "JSONL")]
    dialogues: PathBuf,
    /// Segmentation JSONL from `tsk segment`.
    #[arg(long, value_name = "JSONL")]
    segments: PathBuf,
    /// Word vectors (text format).
    #[arg(long, value_name = "FILE")]
    vectors: PathBuf,
    /// Output embedding matrix (binary, one row per segment).
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
    /// whitespace_lower or char_level [default: whitespace_lower]
    #[arg(long)]
    tokenizer: Option<tsk::Tokenizer>,
    #[command(flatten)]
    sif: SifFlags,
}

#[derive(Serialize)]
struct SifReport {
    rows: usize,
    dim: usize,
    out: PathBuf,
}

pub fn sif(a: SifArgs, out: Output) -> Result<()> {
    let mut o = ConfigOverrides {
        tokenizer: a.tokenizer,
        ..ConfigOverrides::default()
    };
    a.sif.apply(&mut o);
    let cfg = args::resolve(&o)?;
    let tokenizer = cfg.encoder.tokenizer;
    let dialogues = args::dialogues(&a.dialogues, false)?;
    let segs = load_segmentations(&a.segments, &dialogues)?;
    let table = args::vectors(&a.vectors, cfg.encoder.bad_line_tolerance)?;
    let freq = corpus_frequencies(&dialogues, tokenizer)?;
    let result = sif_embed(&segment_texts(&dialogues, &segs), tokenizer, &table, &freq, &cfg.sif)?;
    write_embeddings(&a.out, &result.embeddings)?;
    out.emit(&SifReport {
        rows: result.embeddings.nrows(),
        dim: result.embeddings.ncols(),
        out: a.out,
    })
}

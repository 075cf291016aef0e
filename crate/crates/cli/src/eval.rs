//! `eval seg | cluster | e2e | rs`.

use std::collections::HashMap;
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Subcommand};
use serde::Deserialize;
use tsk::corpus::Dialogue;
use tsk::eval::{read_ranked, rs_metrics, Candidate, RankedCandidates, DEFAULT_F1_THRESHOLD, DEFAULT_OVERLAP_THRESHOLD};
use tsk::pipeline::{evaluate, load_assignments, load_segmentations, read_jsonl, segment_gold_topics, EvalConfig};
use tsk::segment::Segmentation;
use tsk::tadam::MatchInstance;

use crate::args;
use crate::data::segmentation_metrics;
use crate::output::Output;

#[derive(Debug, Subcommand)]
pub enum EvalCommand {
    /// MAE, WindowDiff and boundary precision/recall/F1.
    Seg(SegEvalArgs),
    /// N_c, C_rate, A_rate and NMI against majority gold topics.
    Cluster(ClusterEvalArgs),
    /// End-to-end F1 of segmentation and clustering together.
    E2e(E2eArgs),
    /// Recall@k, MAP, MRR and P@1 of ranked responses.
    Rs(RsArgs),
}

#[derive(Debug, Args)]
pub struct SegEvalArgs {
    /// Dialogues JSONL with gold boundaries.
    #[arg(long, value_name = "JSONL")]
    dialogues: PathBuf,
    /// Predicted segmentation JSONL.
    #[arg(long, value_name = "JSONL")]
    segments: PathBuf,
    #[arg(long, default_value_t = 4)]
    window: usize,
}

#[derive(Debug, Args)]
pub struct Predictions {
    /// Dialogues JSONL with gold annotation.
    #[arg(long, value_name = "JSONL")]
    dialogues: PathBuf,
    /// Predicted segmentation JSONL.
    #[arg(long, value_name = "JSONL")]
    segments: PathBuf,
    /// Cluster assignments JSONL.
    #[arg(long, value_name = "JSONL")]
    assignments: PathBuf,
}

#[derive(Debug, Args)]
pub struct ClusterEvalArgs {
    #[command(flatten)]
    pred: Predictions,
    /// Clusters whose best topic F1 falls below this are not retained.
    #[arg(long, default_value_t = DEFAULT_F1_THRESHOLD)]
    f1_threshold: f64,
}

#[derive(Debug, Args)]
pub struct E2eArgs {
    #[command(flatten)]
    pred: Predictions,
    /// Smallest overlap F1 for a predicted segment to match a gold one.
    #[arg(long, default_value_t = DEFAULT_OVERLAP_THRESHOLD)]
    overlap_threshold: f64,
}

#[derive(Debug, Args)]
pub struct RsArgs {
    /// Either ranked contexts ({"context_id", "candidates": [{"id", "score",
    /// "label"}]}) or, with --data, flat `tadam score` output.
    #[arg(long, value_name = "JSONL")]
    scores: PathBuf,
    /// Match instances supplying the labels of flat score records.
    #[arg(long, value_name = "JSONL")]
    data: Option<PathBuf>,
    /// Candidates per context [default: that of the first context]
    #[arg(long)]
    n: Option<usize>,
    /// Cutoffs for Recall@k.
    #[arg(long, value_delimiter = ',', default_value = "1,2,5")]
    k: Vec<usize>,
}

pub fn run(cmd: EvalCommand, out: Output) -> Result<()> {
    match cmd {
        EvalCommand::Seg(a) => {
            let dialogues = args::dialogues(&a.dialogues, true)?;
            let segs = load_segmentations(&a.segments, &dialogues)?;
            let report = segmentation_metrics(&dialogues, &segs, a.window)?.context("gold boundaries are missing")?;
            out.emit(&report)
        }
        EvalCommand::Cluster(a) => {
            let cfg = EvalConfig {
                f1_threshold: a.f1_threshold,
                ..EvalConfig::default()
            };
            let report = predictions_report(&a.pred, &cfg)?;
            out.emit(&report.clustering.context("gold topics are missing")?)
        }
        EvalCommand::E2e(a) => {
            let cfg = EvalConfig {
                overlap_threshold: a.overlap_threshold,
                ..EvalConfig::default()
            };
            let report = predictions_report(&a.pred, &cfg)?;
            out.emit(&report.e2e.context("gold boundaries and topics are missing")?)
        }
        EvalCommand::Rs(a) => rs(a, out),
    }
}

fn predictions_report(p: &Predictions, cfg: &EvalConfig) -> Result<tsk::pipeline::PipelineReport> {
    for (name, v) in [("f1 threshold", cfg.f1_threshold), ("overlap threshold", cfg.overlap_threshold)] {
        if !(0.0..=1.0).contains(&v) {
            bail!("{name} must lie in [0, 1], got {v}");
        }
    }
    let dialogues: Vec<Dialogue> = args::dialogues(&p.dialogues, true)?;
    let segs: Vec<Segmentation> = load_segmentations(&p.segments, &dialogues)?;
    let records = load_assignments(&p.assignments, &dialogues, &segs)?;
    let gold: Option<Vec<Vec<String>>> = dialogues.iter().zip(&segs).map(|(d, s)| segment_gold_topics(d, s)).collect();
    let m = records.iter().flat_map(|r| r.clusters.iter()).max().map_or(0, |c| c + 1);
    Ok(evaluate(&dialogues, &segs, &records, gold.as_deref(), m, cfg)?)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ScoreRecord {
    context_id: String,
    candidate_id: String,
    score: f64,
}

fn rs(a: RsArgs, out: Output) -> Result<()> {
    let data = match &a.data {
        None => {
            let file = File::open(&a.scores).with_context(|| format!("opening {}", a.scores.display()))?;
            read_ranked(BufReader::new(file))?
        }
        Some(instances) => join_labels(&a.scores, instances)?,
    };
    let n = match (a.n, data.first()) {
        (Some(n), _) => n,
        (None, Some(first)) => first.candidates.len(),
        (None, None) => bail!("{} holds no contexts", a.scores.display()),
    };
    out.emit(&rs_metrics(&data, n, &a.k)?)
}

/// Groups flat score records by context (in order of first appearance) and
/// takes each candidate's label from the instance file.
fn join_labels(scores: &Path, instances: &Path) -> Result<Vec<RankedCandidates>> {
    let labels: HashMap<String, u8> = read_jsonl::<MatchInstance>(instances)?
        .into_iter()
        .map(|m| (m.candidate_id, m.label))
        .collect();
    let mut out: Vec<RankedCandidates> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    for r in read_jsonl::<ScoreRecord>(scores)? {
        let label = *labels
            .get(&r.candidate_id)
            .with_context(|| format!("candidate {} is not in {}", r.candidate_id, instances.display()))?;
        let i = *index.entry(r.context_id.clone()).or_insert_with(|| {
            out.push(RankedCandidates {
                context_id: r.context_id.clone(),
                candidates: Vec::new(),
            });
            out.len() - 1
        });
        out[i].candidates.push(Candidate {
            id: r.candidate_id,
            score: r.score,
            label,
        });
    }
    Ok(out)
}

//! `cluster pretrain | fit | predict`.

use std::path::PathBuf;

use anyhow::{ensure, Context, Result};
use clap::{Args, Subcommand};
use serde::Serialize;
use tsk::artifact::read_embeddings;
use tsk::cluster::{fit, load_model, load_sae, sae_pretrain, save_model, save_sae, PretrainParams, SelfTrainParams, TrainParams};
use tsk::pipeline::{assignment_records, default_m, load_segmentations, segment_gold_topics, write_jsonl};

use crate::args;
use crate::output::Output;

#[derive(Debug, Subcommand)]
pub enum ClusterCommand {
    /// Train the stacked autoencoder on segment embeddings.
    Pretrain(PretrainArgs),
    /// Initialize centroids by k-means on the codes, then self-train.
    Fit(FitArgs),
    /// Assign segments to the clusters of a fitted model.
    Predict(PredictArgs),
}

#[derive(Debug, Args)]
pub struct PretrainArgs {
    /// Embedding matrix from `tsk sif`.
    #[arg(long, value_name = "FILE")]
    embeddings: PathBuf,
    /// Output autoencoder (checksummed JSON).
    #[arg(long, value_name = "JSON")]
    out: PathBuf,
    /// Encoder widths after the input; the last is the code size.
    #[arg(long, value_delimiter = ',', default_value = "256,64,16")]
    hidden: Vec<usize>,
    /// [default: 100]
    #[arg(long)]
    epochs: Option<usize>,
    /// [default: 32]
    #[arg(long)]
    batch_size: Option<usize>,
    /// [default: 0.01]
    #[arg(long)]
    learning_rate: Option<f64>,
    /// [default: 0.9]
    #[arg(long)]
    momentum: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Serialize)]
struct PretrainSummary {
    dims: Vec<usize>,
    epochs: usize,
    final_loss: f64,
    checksum: String,
    out: PathBuf,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long, value_name = "FILE")]
    embeddings: PathBuf,
    /// Pretrained autoencoder from `cluster pretrain`.
    #[arg(long, value_name = "JSON")]
    sae: PathBuf,
    /// Output cluster model (checksummed JSON).
    #[arg(long, value_name = "JSON")]
    out: PathBuf,
    /// Number of clusters. Without it, the number of distinct gold topics
    /// of the segments given by --dialogues/--segments.
    #[arg(long)]
    m: Option<usize>,
    /// Degrees of freedom of the Student's t kernel.
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
    /// Steps between target distribution refreshes [default: 500]
    #[arg(long)]
    update_interval: Option<usize>,
    /// Step budget [default: 20000]
    #[arg(long)]
    iter_max: Option<usize>,
    /// [default: 0.01]
    #[arg(long)]
    learning_rate: Option<f64>,
    /// Keep the k-means centroids fixed during self-training.
    #[arg(long)]
    freeze_centroids: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Dialogues JSONL, for writing per-dialogue assignments.
    #[arg(long, value_name = "JSONL", requires = "segments")]
    dialogues: Option<PathBuf>,
    /// Segmentation JSONL the embeddings were computed from.
    #[arg(long, value_name = "JSONL", requires = "dialogues")]
    segments: Option<PathBuf>,
    /// Output assignments JSONL: {"id", "clusters"} per dialogue.
    #[arg(long, value_name = "JSONL", requires = "segments")]
    assignments: Option<PathBuf>,
}

#[derive(Serialize)]
struct FitSummary {
    m: usize,
    kmeans_inertia: f64,
    steps: usize,
    refreshes: usize,
    converged: bool,
    final_kl: Option<f64>,
    cluster_sizes: Vec<usize>,
    checksum: String,
    out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long, value_name = "JSON")]
    model: PathBuf,
    #[arg(long, value_name = "FILE")]
    embeddings: PathBuf,
    #[arg(long, value_name = "JSONL")]
    dialogues: PathBuf,
    #[arg(long, value_name = "JSONL")]
    segments: PathBuf,
    /// Output assignments JSONL.
    #[arg(long, value_name = "JSONL")]
    out: PathBuf,
}

#[derive(Serialize)]
struct PredictSummary {
    segments: usize,
    cluster_sizes: Vec<usize>,
    out: PathBuf,
}

fn sizes(assignments: &[usize], m: usize) -> Vec<usize> {
    let mut s = vec![0; m];
    for &a in assignments {
        s[a] += 1;
    }
    s
}

pub fn run(cmd: ClusterCommand, out: Output) -> Result<()> {
    match cmd {
        ClusterCommand::Pretrain(a) => pretrain(a, out),
        ClusterCommand::Fit(a) => fit_cmd(a, out),
        ClusterCommand::Predict(a) => predict(a, out),
    }
}

fn pretrain(a: PretrainArgs, out: Output) -> Result<()> {
    let x = read_embeddings(&a.embeddings)?;
    let d = PretrainParams::default();
    let params = PretrainParams {
        epochs: a.epochs.unwrap_or(d.epochs),
        batch_size: a.batch_size.unwrap_or(d.batch_size),
        learning_rate: a.learning_rate.unwrap_or(d.learning_rate),
        momentum: a.momentum.unwrap_or(d.momentum),
    };
    let mut dims = vec![x.ncols()];
    dims.extend(&a.hidden);
    let (sae, report) = sae_pretrain(&x, &dims, &params, a.seed)?;
    let checksum = save_sae(&sae, &a.out)?;
    out.emit(&PretrainSummary {
        dims,
        epochs: report.epoch_losses.len(),
        final_loss: report.final_loss,
        checksum,
        out: a.out,
    })
}

fn fit_cmd(a: FitArgs, out: Output) -> Result<()> {
    let x = read_embeddings(&a.embeddings)?;
    let sae = load_sae(&a.sae)?;
    let corpus = match (&a.dialogues, &a.segments) {
        (Some(dp), Some(sp)) => {
            let dialogues = args::dialogues(dp, false)?;
            let segs = load_segmentations(sp, &dialogues)?;
            let n: usize = segs.iter().map(|s| s.num_segments()).sum();
            ensure!(n == x.nrows(), "{} has {} rows for {n} segments", a.embeddings.display(), x.nrows());
            Some((dialogues, segs))
        }
        _ => None,
    };
    let m = match (a.m, &corpus) {
        (Some(m), _) => m,
        (None, Some((dialogues, segs))) => {
            let gold: Option<Vec<Vec<String>>> =
                dialogues.iter().zip(segs).map(|(d, s)| segment_gold_topics(d, s)).collect();
            default_m(gold.as_deref())?
        }
        (None, None) => anyhow::bail!("--m is required unless --dialogues and --segments name gold topics"),
    };
    let d = SelfTrainParams::default();
    let tp = TrainParams {
        seed: a.seed,
        selftrain: SelfTrainParams {
            learning_rate: a.learning_rate.unwrap_or(d.learning_rate),
            update_interval: a.update_interval.unwrap_or(d.update_interval),
            iter_max: a.iter_max.unwrap_or(d.iter_max),
            freeze_centroids: a.freeze_centroids,
            ..d
        },
        ..TrainParams::default()
    };
    let result = fit(&sae, &x, m, a.alpha, &tp)?;
    let checksum = save_model(&result.model, &a.out)?;
    if let (Some(path), Some((dialogues, segs))) = (&a.assignments, &corpus) {
        write_jsonl(path, &assignment_records(dialogues, segs, &result.assignments))?;
    }
    let h = &result.history;
    out.emit(&FitSummary {
        m,
        kmeans_inertia: result.kmeans_inertia,
        steps: h.kl.len(),
        refreshes: h.refresh_iters.len(),
        converged: h.converged,
        final_kl: h.kl.last().copied(),
        cluster_sizes: sizes(&result.assignments, m),
        checksum,
        out: a.out,
    })
}

fn predict(a: PredictArgs, out: Output) -> Result<()> {
    let model = load_model(&a.model)?;
    let x = read_embeddings(&a.embeddings)?;
    let dialogues = args::dialogues(&a.dialogues, false)?;
    let segs = load_segmentations(&a.segments, &dialogues)?;
    let n: usize = segs.iter().map(|s| s.num_segments()).sum();
    ensure!(n == x.nrows(), "{} has {} rows for {n} segments", a.embeddings.display(), x.nrows());
    let assignments = model.predict(&x).context("predicting clusters")?;
    write_jsonl(&a.out, &assignment_records(&dialogues, &segs, &assignments))?;
    out.emit(&PredictSummary {
        segments: n,
        cluster_sizes: sizes(&assignments, model.m()),
        out: a.out,
    })
}

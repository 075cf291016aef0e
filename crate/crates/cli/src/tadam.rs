//! `tadam score | grad-check | demo-train`.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use anyhow::{bail, ensure, Context, Result};
use clap::{Args, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use tsk::embed::{write_word_vectors, EncoderSpec};
use tsk::pipeline::{read_jsonl, write_jsonl};
use tsk::tadam::{
    build_input, demo_train, grad_check, load_tadam, precision_at_1, save_tadam, score, MatchInstance, TadamInput,
    TadamModel, TadamParams, TokenEmbedder,
};
use tsk::toy::{perturb_tadam, random_tadam_input, MatchTask};
use tsk::Tokenizer;

use crate::args;
use crate::output::Output;

#[derive(Debug, Subcommand)]
pub enum TadamCommand {
    /// Score (context, response) pairs with a trained model.
    Score(ScoreArgs),
    /// Compare analytic gradients with central finite differences on a
    /// random model and input; fails when the error exceeds the tolerance.
    GradCheck(GradCheckArgs),
    /// Train on a constructed separable matching task.
    DemoTrain(DemoArgs),
}

/// `T,L,d,h`.
fn dims(v: &[usize]) -> Result<TadamParams> {
    let [t, l, d, h] = v else {
        bail!("--dims takes four values T,L,d,h, got {}", v.len());
    };
    let p = TadamParams {
        t: *t,
        l: *l,
        d: *d,
        h: *h,
        ..TadamParams::default()
    };
    p.validate()?;
    Ok(p)
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    /// Model file (checksummed JSON).
    #[arg(long, value_name = "JSON")]
    model: PathBuf,
    /// Match instances: {"context_id", "candidate_id", "segments", "response"}.
    #[arg(long, value_name = "JSONL")]
    data: PathBuf,
    /// Output {"context_id", "candidate_id", "score"} per instance.
    #[arg(long, value_name = "JSONL")]
    out: PathBuf,
    /// Word vectors used to embed tokens.
    #[arg(long, value_name = "FILE")]
    vectors: PathBuf,
    /// Seed of the projection applied when the vectors' dimension differs
    /// from the model's.
    #[arg(long, default_value_t = 0)]
    embed_seed: u64,
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Serialize)]
struct ScoreRecord<'a> {
    context_id: &'a str,
    candidate_id: &'a str,
    score: f64,
}

#[derive(Serialize)]
struct ScoreSummary {
    instances: usize,
    mean_score: f64,
    out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GradCheckArgs {
    /// Model dimensions T,L,d,h.
    #[arg(long, value_delimiter = ',', default_value = "3,4,6,4")]
    dims: Vec<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Use the full bilinear W1 instead of the diagonal one.
    #[arg(long)]
    bilinear: bool,
    /// Real segments in the random context [default: T]
    #[arg(long)]
    segments: Option<usize>,
    /// Target label, 0 or 1.
    #[arg(long, default_value_t = 1)]
    label: u8,
    /// Finite-difference step.
    #[arg(long, default_value_t = 1e-5)]
    eps: f64,
    /// Largest accepted relative error.
    #[arg(long, default_value_t = 1e-3)]
    tolerance: f64,
}

#[derive(Debug, Args)]
pub struct DemoArgs {
    /// Output model file.
    #[arg(long, value_name = "JSON")]
    out: PathBuf,
    /// Model dimensions T,L,d,h.
    #[arg(long, value_delimiter = ',', default_value = "4,6,16,4")]
    dims: Vec<usize>,
    #[arg(long, default_value_t = 50)]
    epochs: usize,
    #[arg(long, default_value_t = 0.02)]
    lr: f64,
    /// Contexts in the task; each has one positive and one negative response.
    #[arg(long, default_value_t = 100)]
    contexts: usize,
    #[arg(long, default_value_t = 8)]
    topics: usize,
    /// Spread of word vectors around their topic direction.
    #[arg(long, default_value_t = 0.2)]
    noise: f64,
    #[arg(long)]
    bilinear: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also write the task's instances (JSONL) here.
    #[arg(long, value_name = "JSONL")]
    export_data: Option<PathBuf>,
    /// Also write the task's word vectors here.
    #[arg(long, value_name = "FILE")]
    export_vectors: Option<PathBuf>,
}

#[derive(Serialize)]
struct DemoSummary {
    instances: usize,
    epochs: usize,
    first_loss: Option<f64>,
    final_loss: Option<f64>,
    #[serde(rename = "P@1")]
    p_at_1: f64,
    checksum: String,
    out: PathBuf,
}

pub fn run(cmd: TadamCommand, out: Output) -> Result<()> {
    match cmd {
        TadamCommand::Score(a) => score_cmd(a, out),
        TadamCommand::GradCheck(a) => {
            ensure!(a.label <= 1, "--label must be 0 or 1");
            let p = dims(&a.dims)?;
            let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
            let mut model = TadamModel::new(p, a.bilinear, a.seed)?;
            perturb_tadam(&mut model, 0.3, &mut rng);
            let input = random_tadam_input(&p, a.segments.unwrap_or(p.t).clamp(1, p.t), &mut rng);
            let report = grad_check(&model, &input, f64::from(a.label), a.eps)?;
            out.emit(&report)?;
            ensure!(
                report.max_rel_err <= a.tolerance,
                "max relative error {:e} exceeds {:e}",
                report.max_rel_err,
                a.tolerance
            );
            Ok(())
        }
        TadamCommand::DemoTrain(a) => demo(a, out),
    }
}

fn score_cmd(a: ScoreArgs, out: Output) -> Result<()> {
    let model = load_tadam(&a.model)?;
    let instances: Vec<MatchInstance> = read_jsonl(&a.data)?;
    let table = args::vectors(&a.vectors, 0)?;
    let embedder = TokenEmbedder::new(
        EncoderSpec::mean_word_vector(table, Tokenizer::WhitespaceLower),
        model.params.d,
        a.embed_seed,
    );
    let scores = args::with_jobs(a.jobs, || {
        instances
            .par_iter()
            .map(|m| {
                let input = build_input(m, &embedder, &model.params)
                    .with_context(|| format!("candidate {}", m.candidate_id))?;
                Ok(score(&model, &input)?)
            })
            .collect::<Result<Vec<f64>>>()
    })??;
    let rows: Vec<ScoreRecord> = instances
        .iter()
        .zip(&scores)
        .map(|(m, &score)| ScoreRecord {
            context_id: &m.context_id,
            candidate_id: &m.candidate_id,
            score,
        })
        .collect();
    write_jsonl(&a.out, &rows)?;
    out.emit(&ScoreSummary {
        instances: rows.len(),
        mean_score: scores.iter().sum::<f64>() / scores.len().max(1) as f64,
        out: a.out,
    })
}

fn demo(a: DemoArgs, out: Output) -> Result<()> {
    let p = dims(&a.dims)?;
    let task = MatchTask {
        contexts: a.contexts,
        topics: a.topics,
        seed: a.seed,
        ..MatchTask::default()
    };
    ensure!(task.topics > task.max_segments, "--topics must exceed {}", task.max_segments);
    let table = task.table(p.d, a.noise)?;
    if let Some(path) = &a.export_vectors {
        let mut w = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
        write_word_vectors(&mut w, &table)?;
        w.flush()?;
    }
    let pairs = task.generate();
    if let Some(path) = &a.export_data {
        let flat: Vec<&MatchInstance> = pairs.iter().flatten().collect();
        write_jsonl(path, &flat)?;
    }
    let embedder = TokenEmbedder::new(EncoderSpec::mean_word_vector(table, Tokenizer::WhitespaceLower), p.d, 0);
    let groups: Vec<Vec<(TadamInput, f64)>> = pairs
        .iter()
        .map(|pair| {
            pair.iter()
                .map(|m| Ok((build_input(m, &embedder, &p)?, f64::from(m.label))))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    let flat: Vec<(TadamInput, f64)> = groups.iter().flatten().cloned().collect();
    let model = TadamModel::new(p, a.bilinear, a.seed)?;
    let report = demo_train(&flat, model, a.epochs, a.lr, a.seed.wrapping_add(1))?;
    let p_at_1 = precision_at_1(&report.model, &groups)?;
    let checksum = save_tadam(&report.model, &a.out)?;
    out.emit(&DemoSummary {
        instances: flat.len(),
        epochs: report.curve.len(),
        first_loss: report.curve.first().copied(),
        final_loss: report.curve.last().copied(),
        p_at_1,
        checksum,
        out: a.out,
    })
}

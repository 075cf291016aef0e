//! `pipeline`: segment → sif → cluster → eval with a resumable manifest.

use std::path::PathBuf;

use anyhow::Result;
use clap::Args;
use serde::Serialize;
use tsk::pipeline::{config_lines, run_pipeline, ConfigOverrides, PipelineConfig, PipelineReport, RunOptions, StageStatus};

use crate::args::{EncoderArgs, SegFlags, SifFlags};
use crate::output::Output;

#[derive(Debug, Args)]
pub struct PipelineArgs {
    /// JSON config. Flags override its values; unknown keys are errors.
    #[arg(long, value_name = "JSON")]
    config: Option<PathBuf>,
    /// Dialogues JSONL (paths.dialogues).
    #[arg(long, value_name = "JSONL")]
    dialogues: Option<PathBuf>,
    /// Word vectors (paths.vectors).
    #[arg(long, value_name = "FILE")]
    vectors: Option<PathBuf>,
    /// Directory for artifacts and the manifest (paths.out_dir).
    #[arg(long, value_name = "DIR")]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for segmentation [default: logical cores]
    #[arg(long)]
    jobs: Option<usize>,
    /// Rerun every stage even if the manifest says it is up to date.
    #[arg(long)]
    force: bool,
    #[command(flatten)]
    encoder: EncoderArgs,
    #[command(flatten)]
    seg: SegFlags,
    #[command(flatten)]
    sif: SifFlags,
    /// Number of clusters [default: distinct gold topics]
    #[arg(long)]
    m: Option<usize>,
    /// [default: 1]
    #[arg(long)]
    alpha: Option<f64>,
    /// [default: 500]
    #[arg(long)]
    update_interval: Option<usize>,
    /// [default: 20000]
    #[arg(long)]
    iter_max: Option<usize>,
    #[arg(long)]
    freeze_centroids: bool,
    /// Autoencoder widths after the input [default: 256,64,16]
    #[arg(long, value_delimiter = ',')]
    hidden: Option<Vec<usize>>,
    /// [default: 0.25]
    #[arg(long)]
    f1_threshold: Option<f64>,
    /// [default: 0.5]
    #[arg(long)]
    overlap_threshold: Option<f64>,
    /// WindowDiff window [default: 4]
    #[arg(long)]
    window: Option<usize>,
}

impl PipelineArgs {
    fn overrides(&self) -> ConfigOverrides {
        let mut o = ConfigOverrides {
            seed: self.seed,
            m: self.m,
            alpha: self.alpha,
            update_interval: self.update_interval,
            iter_max: self.iter_max,
            freeze_centroids: self.freeze_centroids.then_some(true),
            hidden: self.hidden.clone(),
            f1_threshold: self.f1_threshold,
            overlap_threshold: self.overlap_threshold,
            window: self.window,
            dialogues: self.dialogues.clone(),
            vectors: self.vectors.clone(),
            out_dir: self.out_dir.clone(),
            ..ConfigOverrides::default()
        };
        self.encoder.apply(&mut o);
        self.seg.apply(&mut o);
        self.sif.apply(&mut o);
        o
    }
}

#[derive(Serialize)]
struct Summary {
    out_dir: PathBuf,
    config_hash: String,
    stages: Vec<StageStatus>,
    report: PipelineReport,
}

pub fn run(a: PipelineArgs, out: Output) -> Result<()> {
    let cfg = PipelineConfig::resolve(a.config.as_deref(), &a.overrides())?;
    for (k, v) in config_lines(&cfg) {
        log::debug!("config {k} = {v}");
    }
    let outcome = run_pipeline(
        &cfg,
        RunOptions {
            jobs: a.jobs,
            force: a.force,
        },
    )?;
    out.emit(&Summary {
        out_dir: outcome.out_dir,
        config_hash: cfg.hash(),
        stages: outcome.stages,
        report: outcome.report,
    })
}

//! Argument groups shared by several subcommands, and the glue that turns
//! them into library parameters.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::Args;
use tsk::corpus::{load_dialogues, Dialogue};
use tsk::embed::{load_word_vectors, EncoderSpec, Tokenizer, VectorTable};
use tsk::pipeline::{build_encoder, ConfigOverrides, EncoderChoice, PipelineConfig, ENCODER_URL_ENV};

#[derive(Debug, Clone, Default, Args)]
pub struct EncoderArgs {
    /// Sentence encoder: mean_word_vector, term_frequency or remote
    /// [default: mean_word_vector]
    #[arg(long, value_name = "KIND")]
    pub encoder: Option<EncoderChoice>,
    /// whitespace_lower or char_level [default: whitespace_lower]
    #[arg(long)]
    pub tokenizer: Option<Tokenizer>,
    /// Base URL of the embedding service (POST <url>/encode). Falls back to
    /// the TSK_ENCODER_URL environment variable.
    #[arg(long, value_name = "URL")]
    pub encoder_url: Option<String>,
    /// Per-request timeout of the embedding service [default: 5000]
    #[arg(long, value_name = "MS")]
    pub encoder_timeout_ms: Option<u64>,
    /// Retries after a failed request [default: 3]
    #[arg(long, value_name = "N")]
    pub encoder_retries: Option<u32>,
    /// Texts per request [default: 32]
    #[arg(long, value_name = "N")]
    pub encoder_batch: Option<usize>,
    /// Reject service vectors of any other dimension.
    #[arg(long, value_name = "D")]
    pub encoder_expected_dim: Option<usize>,
}

impl EncoderArgs {
    pub fn apply(&self, o: &mut ConfigOverrides) {
        o.encoder = self.encoder;
        o.tokenizer = self.tokenizer;
        o.encoder_url.clone_from(&self.encoder_url);
        o.encoder_timeout_ms = self.encoder_timeout_ms;
        o.encoder_retries = self.encoder_retries;
        o.encoder_batch = self.encoder_batch;
        o.encoder_expected_dim = self.encoder_expected_dim;
    }
}

#[derive(Debug, Clone, Default, Args)]
pub struct SegFlags {
    /// Longest segment considered when growing a segment [default: 8]
    #[arg(long = "R", value_name = "R")]
    pub r: Option<usize>,
    /// Utterances averaged on each side of a candidate cut [default: 2]
    #[arg(long, value_name = "K")]
    pub k: Option<usize>,
    /// Shortest segment [default: 2]
    #[arg(long, value_name = "D")]
    pub d: Option<usize>,
    /// Similarity threshold that ends a segment [default: 0.6]
    #[arg(long, value_name = "THETA")]
    pub theta: Option<f64>,
}

impl SegFlags {
    pub fn apply(&self, o: &mut ConfigOverrides) {
        o.r = self.r;
        o.k = self.k;
        o.d = self.d;
        o.theta = self.theta;
    }
}

#[derive(Debug, Clone, Default, Args)]
pub struct SifFlags {
    /// SIF smoothing parameter a [default: 0.001]
    #[arg(long, value_name = "A")]
    pub sif_a: Option<f64>,
    /// Power iterations for the removed singular direction [default: 200]
    #[arg(long, value_name = "N")]
    pub sif_power_iters: Option<usize>,
}

impl SifFlags {
    pub fn apply(&self, o: &mut ConfigOverrides) {
        o.sif_a = self.sif_a;
        o.sif_power_iters = self.sif_power_iters;
    }
}

/// Defaults overlaid with flags, then the encoder URL environment fallback;
/// parameters are validated but no paths are required.
pub fn resolve(o: &ConfigOverrides) -> Result<PipelineConfig> {
    let mut cfg = PipelineConfig::default();
    cfg.apply(o);
    if cfg.encoder.url.is_none() {
        cfg.encoder.url = std::env::var(ENCODER_URL_ENV).ok().filter(|u| !u.is_empty());
    }
    cfg.validate_params()?;
    Ok(cfg)
}

pub fn dialogues(path: &Path, require_gold: bool) -> Result<Vec<Dialogue>> {
    let d = load_dialogues(path, require_gold)?;
    anyhow::ensure!(!d.is_empty(), "{} holds no dialogues", path.display());
    log::info!("{}: {} dialogues", path.display(), d.len());
    Ok(d)
}

pub fn vectors(path: &Path, bad_line_tolerance: usize) -> Result<VectorTable> {
    let (table, report) = load_word_vectors(path, bad_line_tolerance)?;
    if !report.bad_lines.is_empty() {
        log::warn!("{}: skipped {} malformed lines", path.display(), report.bad_lines.len());
    }
    log::info!("{}: {} vectors of dimension {}", path.display(), table.len(), table.dim());
    Ok(table)
}

/// The configured sentence encoder; word vectors are only read when the
/// encoder needs them.
pub fn encoder(cfg: &PipelineConfig, vectors_path: Option<&PathBuf>, corpus: &[Dialogue]) -> Result<EncoderSpec> {
    let table = match cfg.encoder.kind {
        EncoderChoice::MeanWordVector => {
            let path = vectors_path.context("--vectors is required by the mean_word_vector encoder")?;
            vectors(path, cfg.encoder.bad_line_tolerance)?
        }
        _ => VectorTable::new(1),
    };
    Ok(build_encoder(&cfg.encoder, &table, corpus)?)
}

/// Runs `f` on a pool of `jobs` threads, or on the global pool.
pub fn with_jobs<T: Send>(jobs: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match jobs {
        Some(n) => Ok(rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .context("building the worker pool")?
            .install(f)),
        None => Ok(f()),
    }
}

//! Configuration and the staged segment → SIF → cluster → evaluate run.
//!
//! Every stage writes its artifacts to the output directory and records a
//! key (a hash of its configuration and input artifacts) plus the hashes of
//! its outputs in `manifest.json`. A rerun skips any stage whose key and
//! outputs are unchanged, and refuses to continue past an output that was
//! modified after it was written.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::artifact::{read_embeddings, write_embeddings, ArtifactError, FORMAT_VERSION};
use crate::cluster::{fit, load_model, sae_pretrain, save_model, save_sae, ClusterError, KMeansParams, PretrainParams, SelfTrainParams, TrainParams};
use crate::corpus::{load_dialogues, CorpusError, Dialogue, IGNORE_TOPIC};
use crate::embed::{load_word_vectors, word_frequencies, EmbedError, EncoderSpec, RemoteConfig, RemoteEncoder, Tokenizer, Vocabulary};
use crate::eval::{cluster_metrics, e2e_f1, ClusterEvalReport, E2eDialogue, E2eReport, EvalError};
use crate::segment::{mean_window_diff, seg_f1, seg_mae, segment_dialogue, BoundaryScores, SegParams, Segmentation, SegmentError, SegmentationRecord};
use crate::sif::{sif_embed, SifError, SifParams};
use crate::tadam::TadamParams;

/// Environment variable consulted when no encoder URL is configured.
pub const ENCODER_URL_ENV: &str = "TSK_ENCODER_URL";

pub const SEGMENTS_FILE: &str = "segments.jsonl";
pub const EMBEDDINGS_FILE: &str = "embeddings.bin";
pub const SAE_FILE: &str = "sae.json";
pub const MODEL_FILE: &str = "model.json";
pub const ASSIGNMENTS_FILE: &str = "assignments.jsonl";
pub const REPORT_FILE: &str = "report.json";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("stage {stage}: {detail}")]
    Stage { stage: &'static str, detail: String },
    #[error("{path} line {line}: {detail}")]
    Parse { path: String, line: usize, detail: String },
    #[error("stage {stage}: {path} was modified after it was written (rerun with force to regenerate)")]
    Modified { stage: &'static str, path: String },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Segment(#[from] SegmentError),
    #[error(transparent)]
    Sif(#[from] SifError),
    #[error(transparent)]
    Cluster(#[from] ClusterError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Artifact(#[from] ArtifactError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderChoice {
    #[default]
    MeanWordVector,
    TermFrequency,
    Remote,
}

impl std::str::FromStr for EncoderChoice {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mean_word_vector" => Ok(Self::MeanWordVector),
            "term_frequency" => Ok(Self::TermFrequency),
            "remote" => Ok(Self::Remote),
            other => Err(format!("unknown encoder {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    pub kind: EncoderChoice,
    pub tokenizer: Tokenizer,
    pub url: Option<String>,
    pub timeout_ms: u64,
    pub retries: u32,
    pub batch: usize,
    pub max_in_flight: usize,
    /// Reject remote vectors of any other dimension.
    pub expected_dim: Option<usize>,
    /// Malformed word-vector lines tolerated before loading fails.
    pub bad_line_tolerance: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            kind: EncoderChoice::MeanWordVector,
            tokenizer: Tokenizer::default(),
            url: None,
            timeout_ms: 5000,
            retries: 3,
            batch: 32,
            max_in_flight: 4,
            expected_dim: None,
            bad_line_tolerance: 0,
        }
    }
}

impl EncoderConfig {
    pub fn remote_config(&self) -> Result<RemoteConfig, PipelineError> {
        let url = self
            .url
            .clone()
            .ok_or_else(|| PipelineError::Config(format!("remote encoder needs encoder.url or {ENCODER_URL_ENV}")))?;
        Ok(RemoteConfig {
            timeout: Duration::from_millis(self.timeout_ms),
            retries: self.retries,
            batch_size: self.batch,
            max_in_flight: self.max_in_flight,
            ..RemoteConfig::new(url)
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClusterConfig {
    /// Encoder layer widths after the input; the last is the latent size.
    pub hidden: Vec<usize>,
    /// Number of clusters; when absent, the number of distinct gold topics.
    pub m: Option<usize>,
    pub alpha: f64,
    pub pretrain: PretrainParams,
    pub selftrain: SelfTrainParams,
    pub kmeans: KMeansParams,
}

impl ClusterConfig {
    pub fn train_params(&self, seed: u64) -> TrainParams {
        TrainParams {
            seed,
            pretrain: self.pretrain,
            selftrain: self.selftrain,
            kmeans: self.kmeans,
        }
    }
}

impl Default for ClusterConfig {
    fn default() -> Self {
        Self {
            hidden: vec![256, 64, 16],
            m: None,
            alpha: 1.0,
            pretrain: PretrainParams::default(),
            selftrain: SelfTrainParams::default(),
            kmeans: KMeansParams::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub f1_threshold: f64,
    pub overlap_threshold: f64,
    /// WindowDiff window.
    pub window: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            f1_threshold: crate::eval::DEFAULT_F1_THRESHOLD,
            overlap_threshold: crate::eval::DEFAULT_OVERLAP_THRESHOLD,
            window: 4,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsConfig {
    pub dialogues: Option<PathBuf>,
    /// Word vectors used by SIF and by the averaged-vector encoder.
    pub vectors: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub seed: u64,
    pub encoder: EncoderConfig,
    pub seg: SegParams,
    pub sif: SifParams,
    pub cluster: ClusterConfig,
    pub eval: EvalConfig,
    pub tadam: TadamParams,
    pub paths: PathsConfig,
}

/// Values given on the command line; each one replaces the file's value.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConfigOverrides {
    pub seed: Option<u64>,
    pub encoder: Option<EncoderChoice>,
    pub tokenizer: Option<Tokenizer>,
    pub encoder_url: Option<String>,
    pub encoder_timeout_ms: Option<u64>,
    pub encoder_retries: Option<u32>,
    pub encoder_batch: Option<usize>,
    pub encoder_expected_dim: Option<usize>,
    pub r: Option<usize>,
    pub k: Option<usize>,
    pub d: Option<usize>,
    pub theta: Option<f64>,
    pub sif_a: Option<f64>,
    pub sif_power_iters: Option<usize>,
    pub m: Option<usize>,
    pub alpha: Option<f64>,
    pub update_interval: Option<usize>,
    pub iter_max: Option<usize>,
    pub freeze_centroids: Option<bool>,
    pub hidden: Option<Vec<usize>>,
    pub f1_threshold: Option<f64>,
    pub overlap_threshold: Option<f64>,
    pub window: Option<usize>,
    pub dialogues: Option<PathBuf>,
    pub vectors: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
}

macro_rules! apply {
    ($($src:expr => $dst:expr),* $(,)?) => {
        $( if let Some(v) = $src.clone() { $dst = v.into(); } )*
    };
}

impl PipelineConfig {
    /// Parses a JSON config; unknown keys are errors.
    pub fn from_json(text: &str) -> Result<Self, PipelineError> {
        serde_json::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))
    }

    /// File values (if any), then command-line overrides, then the encoder
    /// URL environment fallback; the result is validated.
    pub fn resolve(file: Option<&Path>, overrides: &ConfigOverrides) -> Result<Self, PipelineError> {
        let mut cfg = match file {
            Some(path) => {
                let text = fs::read_to_string(path).map_err(io_err(path))?;
                serde_json::from_str(&text).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?
            }
            None => Self::default(),
        };
        cfg.apply(overrides);
        if cfg.encoder.url.is_none() {
            cfg.encoder.url = std::env::var(ENCODER_URL_ENV).ok().filter(|u| !u.is_empty());
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn apply(&mut self, o: &ConfigOverrides) {
        let c = &mut self.cluster;
        apply! {
            o.seed => self.seed,
            o.encoder => self.encoder.kind,
            o.tokenizer => self.encoder.tokenizer,
            o.encoder_url => self.encoder.url,
            o.encoder_timeout_ms => self.encoder.timeout_ms,
            o.encoder_retries => self.encoder.retries,
            o.encoder_batch => self.encoder.batch,
            o.encoder_expected_dim => self.encoder.expected_dim,
            o.r => self.seg.r,
            o.k => self.seg.k,
            o.d => self.seg.d,
            o.theta => self.seg.theta,
            o.sif_a => self.sif.a,
            o.sif_power_iters => self.sif.power_iters,
            o.m => c.m,
            o.alpha => c.alpha,
            o.update_interval => c.selftrain.update_interval,
            o.iter_max => c.selftrain.iter_max,
            o.freeze_centroids => c.selftrain.freeze_centroids,
            o.hidden => c.hidden,
            o.f1_threshold => self.eval.f1_threshold,
            o.overlap_threshold => self.eval.overlap_threshold,
            o.window => self.eval.window,
            o.dialogues => self.paths.dialogues,
            o.vectors => self.paths.vectors,
            o.out_dir => self.paths.out_dir,
        }
    }

    /// Parameter checks only; file existence is checked by [`Self::validate`].
    pub fn validate_params(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::Config(m));
        self.seg.validate()?;
        self.sif.validate()?;
        self.tadam.validate().map_err(|e| PipelineError::Config(e.to_string()))?;
        self.cluster.selftrain.validate()?;
        for (name, v) in [("eval.f1_threshold", self.eval.f1_threshold), ("eval.overlap_threshold", self.eval.overlap_threshold)] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("{name} must lie in [0, 1], got {v}"));
            }
        }
        if self.eval.window == 0 {
            return bad("eval.window must be positive".into());
        }
        if self.cluster.hidden.is_empty() || self.cluster.hidden.contains(&0) {
            return bad("cluster.hidden needs at least one positive width".into());
        }
        if !(self.cluster.alpha > 0.0) {
            return bad(format!("cluster.alpha must be positive, got {}", self.cluster.alpha));
        }
        if self.cluster.m.is_some_and(|m| m < 2) {
            return bad("cluster.m must be at least 2".into());
        }
        if self.encoder.kind == EncoderChoice::Remote && self.encoder.url.is_none() {
            return bad(format!("remote encoder needs encoder.url, --encoder-url or {ENCODER_URL_ENV}"));
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        self.validate_params()?;
        for (name, path) in [("paths.dialogues", &self.paths.dialogues), ("paths.vectors", &self.paths.vectors)] {
            match path {
                None => return Err(PipelineError::Config(format!("{name} is required"))),
                Some(p) if !p.is_file() => {
                    return Err(PipelineError::Config(format!("{name}: {} does not exist", p.display())))
                }
                Some(_) => {}
            }
        }
        if self.paths.out_dir.is_none() {
            return Err(PipelineError::Config("paths.out_dir is required".into()));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let v = serde_json::to_value(self).expect("config serializes");
        sha256_hex(v.to_string().as_bytes())
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn file_hash(path: &Path) -> Result<String, PipelineError> {
    Ok(sha256_hex(&fs::read(path).map_err(io_err(path))?))
}

/// Encoder for segmentation, built from the config and loaded resources.
pub fn build_encoder(
    cfg: &EncoderConfig,
    table: &crate::embed::VectorTable,
    dialogues: &[Dialogue],
) -> Result<EncoderSpec, PipelineError> {
    Ok(match cfg.kind {
        EncoderChoice::MeanWordVector => EncoderSpec::mean_word_vector(table.clone(), cfg.tokenizer),
        EncoderChoice::TermFrequency => {
            let texts = dialogues.iter().flat_map(|d| d.utterances.iter().map(|u| u.text.as_str()));
            EncoderSpec::term_frequency(Vocabulary::from_texts(texts, cfg.tokenizer), cfg.tokenizer)
        }
        EncoderChoice::Remote => EncoderSpec::Remote {
            client: RemoteEncoder::new(cfg.remote_config()?),
            expected_dim: cfg.expected_dim,
        },
    })
}

/// Segments every dialogue on up to `jobs` threads; output order follows
/// the input.
pub fn segment_all(
    dialogues: &[Dialogue],
    encoder: &EncoderSpec,
    params: &SegParams,
    jobs: Option<usize>,
) -> Result<Vec<Segmentation>, PipelineError> {
    let run = || {
        dialogues
            .par_iter()
            .map(|d| segment_dialogue(d, encoder, params, false).map(|(s, _)| s))
            .collect::<Result<Vec<_>, _>>()
    };
    let out = match jobs {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .map_err(|e| PipelineError::Config(format!("thread pool: {e}")))?
            .install(run),
        None => run(),
    };
    Ok(out?)
}

/// Text of every predicted segment, dialogue by dialogue.
pub fn segment_texts(dialogues: &[Dialogue], segs: &[Segmentation]) -> Vec<String> {
    dialogues
        .iter()
        .zip(segs)
        .flat_map(|(d, s)| s.spans().into_iter().map(move |(a, b)| d.span_text(a, b)))
        .collect()
}

/// Majority gold topic of each predicted segment (earliest topic on ties);
/// `None` for dialogues without gold topics.
pub fn segment_gold_topics(dialogue: &Dialogue, seg: &Segmentation) -> Option<Vec<String>> {
    let topics = dialogue.utterance_topics()?;
    Some(
        seg.spans()
            .into_iter()
            .map(|(a, b)| {
                let mut counts: Vec<(&str, usize)> = Vec::new();
                for &t in &topics[a - 1..b] {
                    match counts.iter_mut().find(|(name, _)| *name == t) {
                        Some(c) => c.1 += 1,
                        None => counts.push((t, 1)),
                    }
                }
                let best = counts.iter().map(|c| c.1).max().unwrap_or(0);
                counts.iter().find(|c| c.1 == best).map_or(IGNORE_TOPIC, |c| c.0).to_string()
            })
            .collect(),
    )
}

/// One line of `assignments.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AssignmentRecord {
    pub id: String,
    /// Cluster of each predicted segment, in order.
    pub clusters: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SegmentationReport {
    #[serde(rename = "MAE")]
    pub mae: f64,
    #[serde(rename = "WindowDiff")]
    pub window_diff: f64,
    pub window: usize,
    /// Dialogues too short for the window, left out of WindowDiff.
    pub too_short: usize,
    #[serde(flatten)]
    pub boundaries: BoundaryScores,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PipelineReport {
    pub dialogues: usize,
    pub segments: usize,
    pub m: usize,
    pub segmentation: Option<SegmentationReport>,
    pub clustering: Option<ClusterEvalReport>,
    pub e2e: Option<E2eReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub key: String,
    /// File name → SHA-256.
    pub outputs: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool_version: String,
    pub format_version: u32,
    pub seed: u64,
    pub config_hash: String,
    pub config: PipelineConfig,
    pub stages: BTreeMap<String, StageRecord>,
    pub finished_unix: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageStatus {
    pub stage: &'static str,
    pub skipped: bool,
    pub outputs: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PipelineOutcome {
    pub out_dir: PathBuf,
    pub stages: Vec<StageStatus>,
    pub report: PipelineReport,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RunOptions {
    pub jobs: Option<usize>,
    /// Rerun every stage regardless of the manifest.
    pub force: bool,
}

struct Runner<'a> {
    out: &'a Path,
    old: Option<Manifest>,
    new: BTreeMap<String, StageRecord>,
    force: bool,
    statuses: Vec<StageStatus>,
}

impl Runner<'_> {
    /// Runs `body` unless the manifest shows the same key and intact outputs.
    fn stage(
        &mut self,
        name: &'static str,
        key_parts: &[&str],
        outputs: &[&str],
        body: impl FnOnce() -> Result<(), PipelineError>,
    ) -> Result<(), PipelineError> {
        let key = sha256_hex(format!("{name}\n{}", key_parts.join("\n")).as_bytes());
        let previous = self.old.as_ref().and_then(|m| m.stages.get(name)).filter(|r| r.key == key);
        if let (Some(prev), false) = (previous, self.force) {
            let mut intact = true;
            for f in outputs {
                let path = self.out.join(f);
                if !path.exists() {
                    intact = false;
                    continue;
                }
                if prev.outputs.get(*f) != Some(&file_hash(&path)?) {
                    return Err(PipelineError::Modified {
                        stage: name,
                        path: path.display().to_string(),
                    });
                }
            }
            if intact {
                info!("stage {name}: inputs unchanged, skipped");
                self.new.insert(name.to_string(), prev.clone());
                self.statuses.push(StageStatus {
                    stage: name,
                    skipped: true,
                    outputs: outputs.iter().map(|s| s.to_string()).collect(),
                });
                return Ok(());
            }
        }
        info!("stage {name}: running");
        body()?;
        let mut hashes = BTreeMap::new();
        for f in outputs {
            hashes.insert(f.to_string(), file_hash(&self.out.join(f))?);
        }
        self.new.insert(name.to_string(), StageRecord { key, outputs: hashes });
        self.statuses.push(StageStatus {
            stage: name,
            skipped: false,
            outputs: outputs.iter().map(|s| s.to_string()).collect(),
        });
        Ok(())
    }

    fn hash_of(&self, stage: &str, file: &str) -> String {
        self.new
            .get(stage)
            .and_then(|r| r.outputs.get(file))
            .cloned()
            .unwrap_or_default()
    }
}

/// Writes one JSON object per line.
pub fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), PipelineError> {
    let file = fs::File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    for r in rows {
        serde_json::to_writer(&mut w, r).expect("records serialize");
        w.write_all(b"\n").map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

/// Reads one JSON object per non-blank line.
pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, PipelineError> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| PipelineError::Parse {
            path: path.display().to_string(),
            line: i + 1,
            detail: e.to_string(),
        })?);
    }
    Ok(out)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), PipelineError> {
    let mut text = serde_json::to_string_pretty(value).expect("report serializes");
    text.push('\n');
    fs::write(path, text).map_err(io_err(path))
}

pub fn save_segmentations(path: &Path, dialogues: &[Dialogue], segs: &[Segmentation]) -> Result<(), PipelineError> {
    let records: Vec<SegmentationRecord> = dialogues
        .iter()
        .zip(segs)
        .map(|(d, s)| SegmentationRecord {
            id: d.id.clone(),
            boundaries: s.boundaries().to_vec(),
        })
        .collect();
    write_jsonl(path, &records)
}

/// Reads a segmentation file that must list `dialogues` in the same order.
pub fn load_segmentations(path: &Path, dialogues: &[Dialogue]) -> Result<Vec<Segmentation>, PipelineError> {
    let records: Vec<SegmentationRecord> = read_jsonl(path)?;
    let bad = |detail: String| PipelineError::Parse {
        path: path.display().to_string(),
        line: 0,
        detail,
    };
    if records.len() != dialogues.len() {
        return Err(bad(format!("{} records for {} dialogues", records.len(), dialogues.len())));
    }
    records
        .into_iter()
        .zip(dialogues)
        .map(|(r, d)| {
            if r.id != d.id {
                return Err(bad(format!("record {} where dialogue {} was expected", r.id, d.id)));
            }
            Segmentation::new(d.len(), r.boundaries).map_err(|e| bad(format!("dialogue {}: {e}", d.id)))
        })
        .collect()
}

/// Splits flat per-segment clusters back into per-dialogue records.
pub fn assignment_records(dialogues: &[Dialogue], segs: &[Segmentation], flat: &[usize]) -> Vec<AssignmentRecord> {
    let mut it = flat.iter().copied();
    dialogues
        .iter()
        .zip(segs)
        .map(|(d, s)| AssignmentRecord {
            id: d.id.clone(),
            clusters: it.by_ref().take(s.num_segments()).collect(),
        })
        .collect()
}

/// Reads assignments and checks them against the segmentation.
pub fn load_assignments(path: &Path, dialogues: &[Dialogue], segs: &[Segmentation]) -> Result<Vec<AssignmentRecord>, PipelineError> {
    let records: Vec<AssignmentRecord> = read_jsonl(path)?;
    let bad = |detail: String| PipelineError::Parse {
        path: path.display().to_string(),
        line: 0,
        detail,
    };
    if records.len() != dialogues.len() {
        return Err(bad(format!("{} records for {} dialogues", records.len(), dialogues.len())));
    }
    for ((r, d), s) in records.iter().zip(dialogues).zip(segs) {
        if r.id != d.id || r.clusters.len() != s.num_segments() {
            return Err(bad(format!(
                "record {} has {} clusters; dialogue {} has {} segments",
                r.id,
                r.clusters.len(),
                d.id,
                s.num_segments()
            )));
        }
    }
    Ok(records)
}

/// Runs all stages and writes `manifest.json` last.
pub fn run_pipeline(cfg: &PipelineConfig, opts: RunOptions) -> Result<PipelineOutcome, PipelineError> {
    cfg.validate()?;
    let dialogues_path = cfg.paths.dialogues.as_deref().expect("validated");
    let vectors_path = cfg.paths.vectors.as_deref().expect("validated");
    let out = cfg.paths.out_dir.as_deref().expect("validated");
    fs::create_dir_all(out).map_err(io_err(out))?;
    info!("resolved config: {}", serde_json::to_string(cfg).expect("config serializes"));

    let manifest_path = out.join(MANIFEST_FILE);
    let old = if manifest_path.exists() {
        let text = fs::read_to_string(&manifest_path).map_err(io_err(&manifest_path))?;
        serde_json::from_str::<Manifest>(&text).ok()
    } else {
        None
    };
    let mut runner = Runner {
        out,
        old,
        new: BTreeMap::new(),
        force: opts.force,
        statuses: Vec::new(),
    };

    let dialogues = load_dialogues(dialogues_path, false)?;
    if dialogues.is_empty() {
        return Err(PipelineError::Config(format!("{} holds no dialogues", dialogues_path.display())));
    }
    let (table, load) = load_word_vectors(vectors_path, cfg.encoder.bad_line_tolerance)?;
    if !load.bad_lines.is_empty() {
        log::warn!("{}: skipped {} malformed lines", vectors_path.display(), load.bad_lines.len());
    }
    let dialogues_hash = file_hash(dialogues_path)?;
    let vectors_hash = file_hash(vectors_path)?;
    let json = |v: &dyn erased::Ser| v.json();

    // segment
    let seg_path = out.join(SEGMENTS_FILE);
    let seg_key = [dialogues_hash.as_str(), &vectors_hash, &json(&cfg.encoder), &json(&cfg.seg)];
    runner.stage("segment", &seg_key, &[SEGMENTS_FILE], || {
        let encoder = build_encoder(&cfg.encoder, &table, &dialogues)?;
        let segs = segment_all(&dialogues, &encoder, &cfg.seg, opts.jobs)?;
        save_segmentations(&seg_path, &dialogues, &segs)
    })?;
    let segs = load_segmentations(&seg_path, &dialogues)?;

    // sif
    let emb_path = out.join(EMBEDDINGS_FILE);
    let seg_hash = runner.hash_of("segment", SEGMENTS_FILE);
    let sif_key = [seg_hash.as_str(), &dialogues_hash, &vectors_hash, &json(&cfg.sif), &json(&cfg.encoder.tokenizer)];
    runner.stage("sif", &sif_key, &[EMBEDDINGS_FILE], || {
        let texts = segment_texts(&dialogues, &segs);
        let freq = corpus_frequencies(&dialogues, cfg.encoder.tokenizer)?;
        let result = sif_embed(&texts, cfg.encoder.tokenizer, &table, &freq, &cfg.sif)?;
        Ok(write_embeddings(&emb_path, &result.embeddings)?)
    })?;
    let x = read_embeddings(&emb_path)?;
    let n_segments: usize = segs.iter().map(Segmentation::num_segments).sum();
    if x.nrows() != n_segments {
        return Err(PipelineError::Stage {
            stage: "cluster",
            detail: format!("{} has {} rows for {n_segments} segments", emb_path.display(), x.nrows()),
        });
    }

    // cluster
    let gold: Option<Vec<Vec<String>>> = dialogues.iter().zip(&segs).map(|(d, s)| segment_gold_topics(d, s)).collect();
    let m = match cfg.cluster.m {
        Some(m) => m,
        None => default_m(gold.as_deref())?,
    };
    let emb_hash = runner.hash_of("sif", EMBEDDINGS_FILE);
    let cluster_key = [emb_hash.as_str(), &json(&cfg.cluster), &m.to_string(), &cfg.seed.to_string()];
    let assign_path = out.join(ASSIGNMENTS_FILE);
    runner.stage("cluster", &cluster_key, &[SAE_FILE, MODEL_FILE, ASSIGNMENTS_FILE], || {
        let mut dims = vec![x.ncols()];
        dims.extend(&cfg.cluster.hidden);
        let tp = cfg.cluster.train_params(cfg.seed);
        let (sae, _) = sae_pretrain(&x, &dims, &tp.pretrain, cfg.seed)?;
        save_sae(&sae, &out.join(SAE_FILE))?;
        let result = fit(&sae, &x, m, cfg.cluster.alpha, &tp)?;
        save_model(&result.model, &out.join(MODEL_FILE))?;
        write_jsonl(&assign_path, &assignment_records(&dialogues, &segs, &result.assignments))
    })?;
    // the model file is validated even when the stage was skipped
    load_model(&out.join(MODEL_FILE))?;
    let records = load_assignments(&assign_path, &dialogues, &segs)?;

    // eval
    let report_path = out.join(REPORT_FILE);
    let assign_hash = runner.hash_of("cluster", ASSIGNMENTS_FILE);
    let eval_key = [assign_hash.as_str(), &seg_hash, &dialogues_hash, &json(&cfg.eval)];
    let mut report = None;
    runner.stage("eval", &eval_key, &[REPORT_FILE], || {
        let r = evaluate(&dialogues, &segs, &records, gold.as_deref(), m, &cfg.eval)?;
        write_json(&report_path, &r)?;
        report = Some(r);
        Ok(())
    })?;
    let report = match report {
        Some(r) => r,
        None => evaluate(&dialogues, &segs, &records, gold.as_deref(), m, &cfg.eval)?,
    };

    let manifest = Manifest {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        format_version: FORMAT_VERSION,
        seed: cfg.seed,
        config_hash: cfg.hash(),
        config: cfg.clone(),
        stages: runner.new,
        finished_unix: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
    };
    write_json(&manifest_path, &manifest)?;
    Ok(PipelineOutcome {
        out_dir: out.to_path_buf(),
        stages: runner.statuses,
        report,
    })
}

/// Word frequencies over every utterance of the corpus.
pub fn corpus_frequencies(dialogues: &[Dialogue], tokenizer: Tokenizer) -> Result<crate::embed::FreqTable, PipelineError> {
    Ok(word_frequencies(
        dialogues.iter().flat_map(|d| d.utterances.iter().map(|u| u.text.as_str())),
        tokenizer,
    )?)
}

/// Number of distinct gold topics (other than the ignore label).
pub fn default_m(gold: Option<&[Vec<String>]>) -> Result<usize, PipelineError> {
    let topics: std::collections::BTreeSet<&String> =
        gold.into_iter().flatten().flatten().filter(|t| t.as_str() != IGNORE_TOPIC).collect();
    if topics.len() < 2 {
        return Err(PipelineError::Config(
            "cluster.m is not set and the corpus does not name at least two gold topics".into(),
        ));
    }
    Ok(topics.len())
}

/// Segmentation, clustering and end-to-end metrics for whatever gold
/// annotation the corpus carries.
pub fn evaluate(
    dialogues: &[Dialogue],
    segs: &[Segmentation],
    assignments: &[AssignmentRecord],
    gold_topics: Option<&[Vec<String>]>,
    m: usize,
    cfg: &EvalConfig,
) -> Result<PipelineReport, PipelineError> {
    let n_segments = segs.iter().map(Segmentation::num_segments).sum();
    let golds: Option<Vec<(String, Segmentation)>> =
        dialogues.iter().map(|d| d.gold_segmentation().map(|g| (d.id.clone(), g))).collect();
    let preds: Vec<(String, Segmentation)> = dialogues.iter().map(|d| d.id.clone()).zip(segs.iter().cloned()).collect();

    let segmentation = match &golds {
        Some(g) => {
            let (window_diff, too_short) = mean_window_diff(&preds, g, cfg.window)?;
            Some(SegmentationReport {
                mae: seg_mae(&preds, g)?,
                window_diff,
                window: cfg.window,
                too_short,
                boundaries: seg_f1(&preds, g)?,
            })
        }
        None => None,
    };
    let flat: Vec<usize> = assignments.iter().flat_map(|r| r.clusters.iter().copied()).collect();
    let clustering = match gold_topics {
        Some(topics) => Some(cluster_metrics(&flat, &topics.concat(), cfg.f1_threshold)?),
        None => None,
    };
    let by_id: HashMap<&str, &AssignmentRecord> = assignments.iter().map(|r| (r.id.as_str(), r)).collect();
    let e2e = match &golds {
        Some(g) if dialogues.iter().all(|d| d.gold_topics.is_some()) => {
            let items: Vec<E2eDialogue> = dialogues
                .iter()
                .zip(segs)
                .zip(g)
                .map(|((d, s), (_, gs))| E2eDialogue {
                    id: d.id.clone(),
                    pred: s.clone(),
                    pred_clusters: by_id.get(d.id.as_str()).map(|r| r.clusters.clone()).unwrap_or_default(),
                    gold: gs.clone(),
                    gold_topics: d.gold_topics.clone().unwrap_or_default(),
                })
                .collect();
            Some(e2e_f1(&items, cfg.overlap_threshold)?)
        }
        _ => None,
    };
    Ok(PipelineReport {
        dialogues: dialogues.len(),
        segments: n_segments,
        m,
        segmentation,
        clustering,
        e2e,
    })
}

mod erased {
    use serde::Serialize;

    /// Compact JSON of any serializable config section.
    pub trait Ser {
        fn json(&self) -> String;
    }

    impl<T: Serialize> Ser for T {
        fn json(&self) -> String {
            serde_json::to_string(self).expect("config serializes")
        }
    }
}

/// Flattened `key → value` view of a config, for echoing to logs.
pub fn config_lines(cfg: &PipelineConfig) -> Vec<(String, String)> {
    fn walk(prefix: &str, v: &Value, out: &mut Vec<(String, String)>) {
        match v {
            Value::Object(map) => {
                for (k, v) in map {
                    let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                    walk(&key, v, out);
                }
            }
            other => out.push((prefix.to_string(), other.to_string())),
        }
    }
    let mut out = Vec::new();
    walk("", &serde_json::to_value(cfg).expect("config serializes"), &mut out);
    out
}

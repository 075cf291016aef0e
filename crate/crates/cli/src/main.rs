//! `tsk`: topic segmentation, segment clustering and response matching for
//! multi-turn dialogues.

mod args;
mod cluster;
mod data;
mod eval;
mod output;
mod pipeline;
mod tadam;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::output::Output;

/// Topic-aware dialogue toolkit.
///
/// Data goes to files (or stdout with --json); logs go to stderr. The log
/// level can be raised with -v or set with RUST_LOG.
#[derive(Debug, Parser)]
#[command(name = "tsk", version, propagate_version = true)]
struct Cli {
    /// Print the command's report as JSON on stdout instead of a table.
    #[arg(long, global = true)]
    json: bool,

    /// More log output on stderr (-v debug, -vv trace).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    /// Only warnings and errors on stderr.
    #[arg(short, long, global = true, conflicts_with = "verbose")]
    quiet: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build a multi-topic corpus by joining single-topic dialogues.
    Synth(data::SynthArgs),
    /// Split dialogues into topic segments.
    Segment(data::SegmentArgs),
    /// Embed predicted segments with smooth inverse frequency weighting.
    Sif(data::SifArgs),
    /// Autoencoder pretraining, clustering and prediction.
    #[command(subcommand)]
    Cluster(cluster::ClusterCommand),
    /// Segmentation, clustering, end-to-end and ranking metrics.
    #[command(subcommand)]
    Eval(eval::EvalCommand),
    /// Response matching network: scoring, gradient check, toy training.
    #[command(subcommand)]
    Tadam(tadam::TadamCommand),
    /// Run segment, sif, cluster and eval in one go, skipping stages whose
    /// inputs did not change.
    Pipeline(pipeline::PipelineArgs),
}

fn init_logging(cli: &Cli) {
    let level = match (cli.quiet, cli.verbose) {
        (true, _) => "warn",
        (false, 0) => "info",
        (false, 1) => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .target(env_logger::Target::Stderr)
        .init();
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging(&cli);
    let out = Output { json: cli.json };
    let result = match cli.command {
        Command::Synth(a) => data::synth(a, out),
        Command::Segment(a) => data::segment(a, out),
        Command::Sif(a) => data::sif(a, out),
        Command::Cluster(c) => cluster::run(c, out),
        Command::Eval(c) => eval::run(c, out),
        Command::Tadam(c) => tadam::run(c, out),
        Command::Pipeline(a) => pipeline::run(a, out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e:#}");
            ExitCode::FAILURE
        }
    }
}

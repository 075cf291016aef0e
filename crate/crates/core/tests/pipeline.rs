mod common;

use std::fs;

use tsk::pipeline::{run_pipeline, PipelineError, RunOptions, EMBEDDINGS_FILE, SEGMENTS_FILE};

#[test]
fn fixture_run_clusters_topics() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = common::fixture_config(dir.path(), "out");
    let t = std::time::Instant::now();
    let outcome = run_pipeline(&cfg, RunOptions::default()).unwrap();
    let c = outcome.report.clustering.as_ref().unwrap();
    eprintln!("{:?} seg {:?} a_rate {} nmi {} n_c {}", t.elapsed(), outcome.report.segmentation, c.a_rate, c.nmi, c.n_c);
    assert!(c.a_rate >= 95.0, "A_rate {}", c.a_rate);
    assert!(outcome.stages.iter().all(|s| !s.skipped));

    // unchanged inputs: every stage is skipped and nothing changes
    let before = fs::read(outcome.out_dir.join(EMBEDDINGS_FILE)).unwrap();
    let again = run_pipeline(&cfg, RunOptions::default()).unwrap();
    assert!(again.stages.iter().all(|s| s.skipped));
    assert_eq!(again.report, outcome.report);
    assert_eq!(fs::read(outcome.out_dir.join(EMBEDDINGS_FILE)).unwrap(), before);
}

#[test]
fn corrupt_intermediate_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = common::fixture_config(dir.path(), "out");
    cfg.cluster.pretrain.epochs = 2;
    cfg.cluster.selftrain.iter_max = 10;
    run_pipeline(&cfg, RunOptions::default()).unwrap();
    let seg = cfg.paths.out_dir.as_ref().unwrap().join(SEGMENTS_FILE);
    let mut text = fs::read_to_string(&seg).unwrap();
    text.push('\n');
    fs::write(&seg, text).unwrap();
    match run_pipeline(&cfg, RunOptions::default()) {
        Err(e @ PipelineError::Modified { stage: "segment", .. }) => assert!(e.to_string().contains(SEGMENTS_FILE)),
        other => panic!("expected a modification error, got {other:?}"),
    }
    // forcing regenerates it
    let out = run_pipeline(&cfg, RunOptions { force: true, ..RunOptions::default() }).unwrap();
    assert!(out.stages.iter().all(|s| !s.skipped));
}

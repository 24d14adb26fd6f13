use std::path::Path;

use leadkin::corpus::{raw_corpus, RawCorpusSpec};
use leadkin::io::write_events;
use leadkin::pipeline::{run_pipeline, PipelineConfig, PipelineStage};

fn config(dir: &Path, seed: u64) -> PipelineConfig {
    let input = dir.join("events.csv");
    write_events(&input, &raw_corpus(&RawCorpusSpec::default(), 11)).unwrap();
    PipelineConfig {
        input: Some(input),
        out_dir: dir.join("out"),
        seed,
        n_synth: 2000,
        n_perm: 200,
        ..Default::default()
    }
}

#[test]
fn full_run_writes_five_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), 3);
    let out = run_pipeline(&cfg, None).unwrap();
    assert_eq!(out.written.len(), 5);
    for s in PipelineStage::ALL {
        assert!(cfg.artifact(s).exists(), "{s:?}");
    }
    let summary = out.combine.unwrap();
    assert!((summary.crash_weight_total - summary.counts.n_cmb() as f64).abs() < 1e-9);
    assert!((summary.incident_weight_total - summary.crash_weight_total).abs() < 1e-9);
    assert_eq!(out.report.unwrap().params.len(), 6);
}

#[test]
fn single_stages_chain_like_a_full_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), 5);
    for s in PipelineStage::ALL {
        run_pipeline(&cfg, Some(s)).unwrap();
    }
    let staged: Vec<Vec<u8>> = PipelineStage::ALL
        .iter()
        .map(|&s| std::fs::read(cfg.artifact(s)).unwrap())
        .collect();
    let full = PipelineConfig {
        out_dir: dir.path().join("full"),
        ..cfg.clone()
    };
    run_pipeline(&full, None).unwrap();
    for (s, bytes) in PipelineStage::ALL.iter().zip(staged) {
        assert_eq!(std::fs::read(full.artifact(*s)).unwrap(), bytes, "{s:?}");
    }
}

#[test]
fn missing_input_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = PipelineConfig {
        input: Some(dir.path().join("nope.csv")),
        out_dir: dir.path().join("out"),
        ..Default::default()
    };
    let err = run_pipeline(&cfg, None).unwrap_err();
    assert!(err.to_string().contains("nope.csv"), "{err}");
    assert!(err.is_input_error());
}

mod common;

use std::path::Path;

use common::*;
use vcodec_core::trainer::{
    patches_from_images, read_log, run_algorithm1_on, Phase, RunOptions, TrainingConfig, DEPLOY_FDNN, DEPLOY_PPNN,
    LOG_FILE, PROGRESS_FILE,
};
use vcodec_core::Image;

fn tiny() -> (TrainingConfig, Vec<Image>) {
    let cfg = TrainingConfig {
        outer_iterations: 2,
        ppnn_epochs: 1,
        fdnn_epochs: 1,
        batch_size: 2,
        corpus_size: 4,
        patch_size: 24,
        seed: 5,
        ..TrainingConfig::default()
    };
    let images: Vec<Image> = test_images().into_iter().take(2).map(|(_, x)| x).collect();
    let corpus = patches_from_images(&images, &cfg).unwrap();
    (cfg, corpus)
}

fn mean_abs_diff(a: &Path, b: &Path, name: &str) -> f64 {
    let a = vcodec_core::networks::read_checkpoint(a.join(name)).unwrap();
    let b = vcodec_core::networks::read_checkpoint(b.join(name)).unwrap();
    let (mut sum, mut n) = (0.0, 0usize);
    for (x, y) in a.layers().iter().zip(b.layers()) {
        for (p, q) in x.weights.iter().chain(&x.biases).zip(y.weights.iter().chain(&y.biases)) {
            sum += (p - q).abs() as f64;
            n += 1;
        }
    }
    sum / n as f64
}

#[test]
fn same_seed_same_models() {
    let (cfg, corpus) = tiny();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let sa = run_algorithm1_on(&cfg, &corpus, RunOptions::new(a.path())).unwrap();
    run_algorithm1_on(&cfg, &corpus, RunOptions::new(b.path())).unwrap();
    for name in [DEPLOY_FDNN, DEPLOY_PPNN] {
        assert!(mean_abs_diff(a.path(), b.path(), name) < 1e-5);
    }
    assert_eq!(read_log(a.path().join(LOG_FILE)).unwrap().len(), cfg.total_epochs());
    assert_eq!(sa.epoch_count(), cfg.total_epochs());

    // every recompression pass spreads pairs evenly over the factors
    assert!(!sa.quality_usage.is_empty());
    for usage in &sa.quality_usage {
        assert_eq!(usage.counts.keys().copied().collect::<Vec<_>>(), cfg.quality_factors);
        let (lo, hi) = (usage.counts.values().min().unwrap(), usage.counts.values().max().unwrap());
        assert!(hi - lo <= 1, "{usage:?}");
    }
}

#[test]
fn resume_reproduces_uninterrupted_run() {
    let (cfg, corpus) = tiny();
    let full = tempfile::tempdir().unwrap();
    run_algorithm1_on(&cfg, &corpus, RunOptions::new(full.path())).unwrap();

    let part = tempfile::tempdir().unwrap();
    run_algorithm1_on(&cfg, &corpus, RunOptions::new(part.path())).unwrap();
    // pretend the run stopped after the first outer iteration's PPNN and VCNN phases
    let progress = std::fs::read_to_string(part.path().join(PROGRESS_FILE)).unwrap();
    let mut json: serde_json::Value = serde_json::from_str(&progress).unwrap();
    json["completed_phases"] = 2.into();
    std::fs::write(part.path().join(PROGRESS_FILE), json.to_string()).unwrap();
    std::fs::remove_file(part.path().join(DEPLOY_PPNN)).unwrap();

    let mut opts = RunOptions::new(part.path());
    opts.resume = true;
    let state = run_algorithm1_on(&cfg, &corpus, opts).unwrap();
    assert_eq!(state.resumed_phases, 2);
    assert_eq!(state.phase, Some(Phase::FinalPpnn));
    for name in [DEPLOY_FDNN, DEPLOY_PPNN] {
        assert_eq!(mean_abs_diff(full.path(), part.path(), name), 0.0, "{name}");
    }
    assert_eq!(read_log(part.path().join(LOG_FILE)).unwrap().len(), cfg.total_epochs());
}

//! End-to-end checks of the command layer against temporary directories.

use du_cli::commands::{
    cmd_analyze_edge, cmd_eval, cmd_generate, cmd_smoothness, cmd_train, dataset_from_config,
    load_net, seed_for,
};
use du_cli::config::{PhiSource, RunConfig, SampleRef};
use du_core::data::ShapeKind;
use du_core::diffcore::checkpoint;
use du_core::net::{DecoderKind, DuNet};
use std::path::PathBuf;

fn temp_out(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("du_cli_{tag}_{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    dir
}

/// A configuration small enough for second-scale runs.
fn tiny_config(tag: &str) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.out = temp_out(tag);
    cfg.n = 96;
    cfg.train_samples = 2;
    cfg.test_samples = 1;
    cfg.epochs = 1;
    cfg.net_stages = 2;
    cfg.net_widths = vec![8, 12];
    cfg.net_ratio = 4;
    cfg.k_encoder = 6;
    cfg.du_k = 6;
    cfg
}

#[test]
fn generate_writes_dataset_and_is_reproducible() {
    let cfg = tiny_config("generate");
    let manifest = cmd_generate(&cfg).unwrap();
    assert_eq!(manifest.train_files.len(), 2);
    assert_eq!(manifest.test_files.len(), 1);
    assert_eq!(manifest.num_classes, 2);
    for counts in &manifest.class_counts {
        assert!(counts.iter().all(|&c| c > 0), "all classes present: {counts:?}");
    }
    let dataset_dir = cfg.out.join("dataset");
    let first = std::fs::read_to_string(dataset_dir.join("train_000.csv")).unwrap();
    let manifest_bytes = std::fs::read(dataset_dir.join("manifest.json")).unwrap();
    // Rerunning the same config reproduces every byte.
    cmd_generate(&cfg).unwrap();
    assert_eq!(
        std::fs::read_to_string(dataset_dir.join("train_000.csv")).unwrap(),
        first
    );
    assert_eq!(
        std::fs::read(dataset_dir.join("manifest.json")).unwrap(),
        manifest_bytes
    );
    std::fs::remove_dir_all(&cfg.out).ok();
}

#[test]
fn generate_validates_before_writing() {
    let mut cfg = tiny_config("generate_invalid");
    cfg.n = 8; // below the recipe minimum
    assert!(cmd_generate(&cfg).is_err());
    assert!(!cfg.out.exists(), "nothing written on validation failure");
}

#[test]
fn train_writes_metrics_checkpoint_and_summary() {
    let cfg = tiny_config("train");
    cmd_generate(&cfg).unwrap();
    let report = cmd_train(&cfg).unwrap();
    assert_eq!(report.outcome.history.len(), 1);
    assert!(report.outcome.history[0].train_loss.is_finite());
    let metrics = std::fs::read_to_string(&report.metrics).unwrap();
    assert_eq!(metrics.lines().count(), 1);
    let line: serde_json::Value = serde_json::from_str(metrics.lines().next().unwrap()).unwrap();
    assert!(line["train_loss"].as_f64().unwrap().is_finite());
    assert!(report.checkpoint.exists());
    assert!(cfg.out.join("summary.json").exists());
    assert!(cfg.out.join("config.txt").exists());
    // Training twice from the same seed produces identical metrics bytes.
    let again = cmd_train(&cfg).unwrap();
    assert_eq!(
        std::fs::read(&report.metrics).unwrap(),
        std::fs::read(&again.metrics).unwrap()
    );
    std::fs::remove_dir_all(&cfg.out).ok();
}

#[test]
fn train_requires_generated_dataset() {
    let cfg = tiny_config("train_missing");
    let err = cmd_train(&cfg);
    assert!(err.is_err());
}

#[test]
fn eval_round_trips_checkpoint_and_rejects_class_mismatch() {
    let cfg = tiny_config("eval");
    cmd_generate(&cfg).unwrap();
    let report = cmd_train(&cfg).unwrap();
    let summary = cmd_eval(&cfg, &report.checkpoint).unwrap();
    assert!((summary.miou - report.summary.miou).abs() < 1e-12);
    assert_eq!(summary.per_class_iou.len(), 2);
    // A three-class recipe cannot load a two-class checkpoint.
    let mut wrong = cfg.clone();
    wrong.recipe = ShapeKind::PlaneWithBoxes;
    assert!(cmd_eval(&wrong, &report.checkpoint).is_err());
    std::fs::remove_dir_all(&cfg.out).ok();
}

#[test]
fn analyze_edge_fixed_weights_classify_as_expected() {
    let mut cfg = tiny_config("edge");
    cfg.edge_samples = 41;
    for (w, want) in [(-1.0, "enhance"), (1.0, "suppress")] {
        cfg.edge_phi = PhiSource::Fixed(w);
        let path = cmd_analyze_edge(&cfg).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let mut rows = 0;
        for line in text.lines().skip(1) {
            let class = line.rsplit(',').next().unwrap();
            assert_eq!(class, want, "weight {w}");
            rows += 1;
        }
        assert_eq!(rows, 41);
    }
    // A seeded random map classifies without error.
    cfg.edge_phi = PhiSource::Seeded(3);
    cfg.edge_dim = 2;
    let path = cmd_analyze_edge(&cfg).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().count(), 1 + 2 * 41);
    std::fs::remove_dir_all(&cfg.out).ok();
}

#[test]
fn analyze_edge_requires_a_du_checkpoint() {
    let mut cfg = tiny_config("edge_ckpt");
    cfg.decoder = DecoderKind::FeaturePropagationOnly;
    cmd_generate(&cfg).unwrap();
    let report = cmd_train(&cfg).unwrap();
    assert!(report.checkpoint.exists());
    cfg.edge_phi = PhiSource::Checkpoint(0);
    let err = cmd_analyze_edge(&cfg);
    assert!(err.is_err(), "no diffusion unit in an fp decoder");
    std::fs::remove_dir_all(&cfg.out).ok();
}

#[test]
fn analyze_edge_from_trained_checkpoint() {
    let cfg = tiny_config("edge_trained");
    cmd_generate(&cfg).unwrap();
    cmd_train(&cfg).unwrap();
    let mut cfg2 = cfg.clone();
    cfg2.edge_phi = PhiSource::Checkpoint(0);
    cfg2.edge_samples = 21;
    let path = cmd_analyze_edge(&cfg2).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    // One block of rows per channel of the last-stage unit (width 8).
    assert_eq!(text.lines().count(), 1 + 8 * 21);
    std::fs::remove_dir_all(&cfg.out).ok();
}

#[test]
fn smoothness_identity_checkpoint_gives_zero_delta() {
    let mut cfg = tiny_config("smooth_identity");
    cfg.identity_init = true;
    // A freshly initialized network is the identity around every block; its
    // checkpoint must yield an all-zero delta field.
    let net = DuNet::new(cfg.network_spec().unwrap(), seed_for(cfg.seed, "init")).unwrap();
    std::fs::create_dir_all(&cfg.out).unwrap();
    let ckpt = cfg.out.join("checkpoint.txt");
    checkpoint::save(&net.store, &ckpt).unwrap();
    let report = cmd_smoothness(&cfg, &ckpt).unwrap();
    let text = std::fs::read_to_string(&report.csv).unwrap();
    for line in text.lines().skip(1) {
        let delta: f64 = line.rsplit(',').next().unwrap().parse().unwrap();
        assert_eq!(delta, 0.0);
    }
    assert!(report.ply_before.exists());
    assert!(report.ply_after.exists());
    assert!(report.ply_delta.exists());
    let ply = std::fs::read_to_string(&report.ply_delta).unwrap();
    assert!(ply.starts_with("ply\nformat ascii 1.0\n"));
    assert!(ply.contains("property float smoothness"));
    std::fs::remove_dir_all(&cfg.out).ok();
}

#[test]
fn smoothness_zeroed_network_gives_zero_before_field() {
    let cfg = tiny_config("smooth_zero");
    // Zeroing every trainable parameter collapses all stage features to
    // constants, so the captured before-field is identically zero.
    let mut net = DuNet::new(cfg.network_spec().unwrap(), seed_for(cfg.seed, "init")).unwrap();
    for id in net.store.iter_ids() {
        if net.store.is_trainable(id) {
            for v in net.store.get_mut(id).data_mut() {
                *v = 0.0;
            }
        }
    }
    std::fs::create_dir_all(&cfg.out).unwrap();
    let ckpt = cfg.out.join("checkpoint.txt");
    checkpoint::save(&net.store, &ckpt).unwrap();
    let report = cmd_smoothness(&cfg, &ckpt).unwrap();
    let text = std::fs::read_to_string(&report.csv).unwrap();
    for line in text.lines().skip(1) {
        let fields: Vec<&str> = line.split(',').collect();
        let before: f64 = fields[3].parse().unwrap();
        assert_eq!(before, 0.0);
    }
    std::fs::remove_dir_all(&cfg.out).ok();
}

#[test]
fn smoothness_rejects_invalid_stage() {
    let mut cfg = tiny_config("smooth_stage");
    let net = DuNet::new(cfg.network_spec().unwrap(), seed_for(cfg.seed, "init")).unwrap();
    std::fs::create_dir_all(&cfg.out).unwrap();
    let ckpt = cfg.out.join("checkpoint.txt");
    checkpoint::save(&net.store, &ckpt).unwrap();
    cfg.smoothness_stage = 5;
    assert!(cmd_smoothness(&cfg, &ckpt).is_err());
    std::fs::remove_dir_all(&cfg.out).ok();
}

#[test]
fn smoothness_reads_sample_from_csv_path() {
    let mut cfg = tiny_config("smooth_csv");
    let dataset = dataset_from_config(&cfg).unwrap();
    std::fs::create_dir_all(&cfg.out).unwrap();
    let sample_path = cfg.out.join("sample.csv");
    du_core::data::write_cloud(&sample_path, &dataset.samples[0]).unwrap();
    let net = DuNet::new(cfg.network_spec().unwrap(), seed_for(cfg.seed, "init")).unwrap();
    let ckpt = cfg.out.join("checkpoint.txt");
    checkpoint::save(&net.store, &ckpt).unwrap();
    cfg.smoothness_sample = SampleRef::Path(sample_path);
    let report = cmd_smoothness(&cfg, &ckpt).unwrap();
    assert!(report.boundary_mean_delta.is_some());
    assert!(report.interior_mean_delta.is_some());
    std::fs::remove_dir_all(&cfg.out).ok();
}

#[test]
fn checkpoint_restores_identical_predictions() {
    let cfg = tiny_config("ckpt_roundtrip");
    cmd_generate(&cfg).unwrap();
    let report = cmd_train(&cfg).unwrap();
    let mut restored = load_net(&cfg, &report.checkpoint).unwrap();
    let dataset = dataset_from_config(&cfg).unwrap();
    let mut counts = du_core::metrics::ConfusionCounts::new(2);
    for cloud in dataset.test_samples() {
        du_core::train::accumulate_predictions(&mut restored, cloud, &mut counts).unwrap();
    }
    assert!((counts.miou() - report.summary.miou).abs() < 1e-12);
    std::fs::remove_dir_all(&cfg.out).ok();
}

#[test]
fn binary_runs_generate_and_reports_errors() {
    let exe = env!("CARGO_BIN_EXE_dunet");
    let out = temp_out("binary");
    let status = std::process::Command::new(exe)
        .args(["generate", "--out"])
        .arg(&out)
        .output()
        .unwrap();
    assert!(status.status.success(), "{:?}", status);
    assert!(out.join("dataset").join("manifest.json").exists());
    // A malformed config exits nonzero with a one-line error.
    let bad = out.join("bad.txt");
    std::fs::write(&bad, "data.n = lots\n").unwrap();
    let status = std::process::Command::new(exe)
        .args(["generate", "--config"])
        .arg(&bad)
        .output()
        .unwrap();
    assert!(!status.status.success());
    let stderr = String::from_utf8_lossy(&status.stderr);
    assert!(stderr.starts_with("error: "), "stderr was {stderr:?}");
    assert_eq!(stderr.trim().lines().count(), 1);
    std::fs::remove_dir_all(&out).ok();
}

//! The command surface: generate, train, eval, ablate, analyze-edge, and
//! smoothness. Every command is a plain function over a [`RunConfig`] so the
//! binary and the test suites share one implementation.

use crate::config::{PhiSource, RunConfig, SampleRef};
use crate::sweep;
use du_core::analysis::{
    classify_edge_behavior, edge_change_rate, label_boundary_band, local_smoothness,
    smoothness_delta, step_edge_profile, SmoothnessKind,
};
use du_core::data::{
    build_dataset, cloud_from_csv, cloud_to_csv, read_cloud, write_scalar_ply, Dataset,
};
use du_core::diffcore::checkpoint;
use du_core::du::du_ablation;
use du_core::net::{DecoderKind, DuNet};
use du_core::rng::Rng;
use du_core::train::{train, TrainOutcome};
use du_core::{CoreError, Mode, PointCloud, Result};
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

/// Dataset description written next to the sample files.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub recipe: String,
    pub n: usize,
    pub noise_sigma: f64,
    pub seed: u64,
    pub num_classes: usize,
    pub train_files: Vec<String>,
    pub test_files: Vec<String>,
    /// Per-sample class histograms, train files first.
    pub class_counts: Vec<Vec<usize>>,
}

#[derive(Clone, Debug, Serialize)]
pub struct MetricsLine {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub test_miou: f64,
    pub test_accuracy: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Summary {
    pub miou: f64,
    pub accuracy: f64,
    pub per_class_iou: Vec<f64>,
    pub param_count: usize,
    /// (decoder stage, requested k, used k) for any clamped stencil.
    pub k_clamps: Vec<(usize, usize, usize)>,
}

fn dataset_dir(cfg: &RunConfig) -> PathBuf {
    cfg.out.join("dataset")
}

fn ensure_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path)?;
    Ok(())
}

fn class_histogram(cloud: &PointCloud, num_classes: usize) -> Vec<usize> {
    let mut counts = vec![0usize; num_classes];
    for &l in cloud.labels().unwrap_or(&[]) {
        if l < num_classes {
            counts[l] += 1;
        }
    }
    counts
}

/// Seed streams fanned out from the run seed, so data, initialization, and
/// training randomness stay independently reproducible.
pub fn seed_for(cfg_seed: u64, purpose: &str) -> u64 {
    Rng::from_path(cfg_seed, purpose).next_u64()
}

/// Build the config's dataset in memory.
pub fn dataset_from_config(cfg: &RunConfig) -> Result<Dataset> {
    build_dataset(
        cfg.recipe,
        cfg.n,
        cfg.noise_sigma,
        seed_for(cfg.seed, "data"),
        cfg.train_samples,
        cfg.test_samples,
    )
}

/// Write train/test sample files plus the manifest. The dataset is fully
/// validated before anything is written.
pub fn cmd_generate(cfg: &RunConfig) -> Result<Manifest> {
    let dataset = dataset_from_config(cfg)?;
    let dir = dataset_dir(cfg);
    ensure_dir(&dir)?;
    let mut train_files = Vec::new();
    let mut test_files = Vec::new();
    let mut class_counts = Vec::new();
    for (pos, &idx) in dataset.train.iter().enumerate() {
        let name = format!("train_{pos:03}.csv");
        std::fs::write(dir.join(&name), cloud_to_csv(&dataset.samples[idx]))?;
        class_counts.push(class_histogram(&dataset.samples[idx], dataset.num_classes));
        train_files.push(name);
    }
    for (pos, &idx) in dataset.test.iter().enumerate() {
        let name = format!("test_{pos:03}.csv");
        std::fs::write(dir.join(&name), cloud_to_csv(&dataset.samples[idx]))?;
        class_counts.push(class_histogram(&dataset.samples[idx], dataset.num_classes));
        test_files.push(name);
    }
    let manifest = Manifest {
        recipe: cfg.recipe.as_str().to_string(),
        n: cfg.n,
        noise_sigma: cfg.noise_sigma,
        seed: cfg.seed,
        num_classes: dataset.num_classes,
        train_files,
        test_files,
        class_counts,
    };
    let json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| CoreError::InvalidArgument(format!("manifest: {e}")))?;
    std::fs::write(dir.join("manifest.json"), json)?;
    Ok(manifest)
}

/// Load a dataset previously written by `generate`.
pub fn load_dataset(cfg: &RunConfig) -> Result<(Dataset, Manifest)> {
    let dir = dataset_dir(cfg);
    let manifest_path = dir.join("manifest.json");
    let text = std::fs::read_to_string(&manifest_path).map_err(|_| {
        CoreError::InvalidArgument(format!(
            "dataset not found at {} (run generate first)",
            manifest_path.display()
        ))
    })?;
    let manifest: Manifest = serde_json::from_str(&text)
        .map_err(|e| CoreError::InvalidArgument(format!("manifest: {e}")))?;
    let mut samples = Vec::new();
    let mut train = Vec::new();
    let mut test = Vec::new();
    for name in &manifest.train_files {
        let text = std::fs::read_to_string(dir.join(name))?;
        train.push(samples.len());
        samples.push(cloud_from_csv(&text)?);
    }
    for name in &manifest.test_files {
        let text = std::fs::read_to_string(dir.join(name))?;
        test.push(samples.len());
        samples.push(cloud_from_csv(&text)?);
    }
    Ok((
        Dataset {
            samples,
            num_classes: manifest.num_classes,
            train,
            test,
        },
        manifest,
    ))
}

/// Train on an in-memory dataset; shared by train, ablate, and the
/// verification suites.
pub fn fit(cfg: &RunConfig, dataset: &Dataset) -> Result<(DuNet, TrainOutcome)> {
    let spec = cfg.network_spec()?;
    if dataset.num_classes != spec.num_classes {
        return Err(CoreError::ShapeMismatch(format!(
            "dataset has {} classes, network expects {}",
            dataset.num_classes, spec.num_classes
        )));
    }
    let mut net = DuNet::new(spec, seed_for(cfg.seed, "init"))?;
    let outcome = train(
        &mut net,
        dataset,
        &cfg.train_config(),
        seed_for(cfg.seed, "train"),
    )?;
    Ok((net, outcome))
}

#[derive(Clone, Debug)]
pub struct TrainReport {
    pub outcome: TrainOutcome,
    pub checkpoint: PathBuf,
    pub metrics: PathBuf,
    pub summary: Summary,
}

/// Train on the on-disk dataset; write per-epoch metrics, the final
/// checkpoint, a summary, and the resolved config.
pub fn cmd_train(cfg: &RunConfig) -> Result<TrainReport> {
    let (dataset, _) = load_dataset(cfg)?;
    let (net, outcome) = fit(cfg, &dataset)?;
    ensure_dir(&cfg.out)?;
    let metrics_path = cfg.out.join("metrics.jsonl");
    let mut lines = String::new();
    for h in &outcome.history {
        let line = MetricsLine {
            epoch: h.epoch,
            lr: h.lr,
            train_loss: h.train_loss,
            test_miou: h.test_miou,
            test_accuracy: h.test_accuracy,
        };
        writeln!(
            lines,
            "{}",
            serde_json::to_string(&line)
                .map_err(|e| CoreError::InvalidArgument(format!("metrics: {e}")))?
        )
        .unwrap();
    }
    std::fs::write(&metrics_path, lines)?;
    let checkpoint_path = cfg.out.join("checkpoint.txt");
    checkpoint::save(&net.store, &checkpoint_path)?;
    let summary = Summary {
        miou: outcome.final_miou,
        accuracy: outcome.final_accuracy,
        per_class_iou: outcome.per_class_iou.clone(),
        param_count: net.trainable_param_count(),
        k_clamps: net.k_clamps.clone(),
    };
    std::fs::write(
        cfg.out.join("summary.json"),
        serde_json::to_string_pretty(&summary)
            .map_err(|e| CoreError::InvalidArgument(format!("summary: {e}")))?,
    )?;
    std::fs::write(cfg.out.join("config.txt"), cfg.serialize())?;
    Ok(TrainReport {
        outcome,
        checkpoint: checkpoint_path,
        metrics: metrics_path,
        summary,
    })
}

/// Restore a checkpoint into a network built from the config.
pub fn load_net(cfg: &RunConfig, checkpoint_path: &Path) -> Result<DuNet> {
    let spec = cfg.network_spec()?;
    let mut net = DuNet::new(spec, seed_for(cfg.seed, "init"))?;
    let loaded = checkpoint::load(checkpoint_path)?;
    net.store.load_values_from(&loaded)?;
    Ok(net)
}

/// Evaluate a checkpoint on the on-disk test split.
pub fn cmd_eval(cfg: &RunConfig, checkpoint_path: &Path) -> Result<Summary> {
    let (dataset, _) = load_dataset(cfg)?;
    let mut net = load_net(cfg, checkpoint_path)?;
    let (miou, accuracy, per_class_iou) = du_core::train::evaluate(&mut net, &dataset)?;
    let summary = Summary {
        miou,
        accuracy,
        per_class_iou,
        param_count: net.trainable_param_count(),
        k_clamps: net.k_clamps.clone(),
    };
    ensure_dir(&cfg.out)?;
    std::fs::write(
        cfg.out.join("eval.json"),
        serde_json::to_string_pretty(&summary)
            .map_err(|e| CoreError::InvalidArgument(format!("summary: {e}")))?,
    )?;
    Ok(summary)
}

/// One sweep row of the ablation table.
#[derive(Clone, Debug)]
pub struct AblationRow {
    pub model_id: String,
    pub seed: u64,
    pub miou: Option<f64>,
    pub param_count: usize,
}

/// Every run configuration of the ablation sweep: the eight unit-switch
/// rows plus the six stage-placement rows.
pub fn ablation_grid(cfg: &RunConfig) -> Result<Vec<(String, RunConfig)>> {
    let mut grid = Vec::new();
    for model in 1..=8u8 {
        du_ablation(model)?;
        let mut c = cfg.clone();
        c.ablation_model = model;
        c.decoder = DecoderKind::Du;
        c.du_stage_list = None;
        grid.push((format!("model_{model}"), c));
    }
    let stage_rows: Vec<(String, Option<Vec<usize>>)> = std::iter::once(("stage_all".to_string(), None))
        .chain((1..=cfg.net_stages).map(|s| (format!("stage_{s}"), Some(vec![s]))))
        .chain(std::iter::once(("stage_none".to_string(), Some(vec![]))))
        .collect();
    for (name, stages) in stage_rows {
        let mut c = cfg.clone();
        c.ablation_model = 0;
        c.decoder = DecoderKind::Du;
        c.du_stage_list = stages;
        grid.push((name, c));
    }
    Ok(grid)
}

/// Run the full ablation grid over the configured seeds, in parallel, and
/// write one deterministic CSV. Failed runs keep their row with an empty
/// mIoU; the sweep continues.
pub fn cmd_ablate(cfg: &RunConfig) -> Result<PathBuf> {
    let grid = ablation_grid(cfg)?;
    let mut tasks: Vec<Box<dyn FnOnce() -> AblationRow + Send>> = Vec::new();
    for (name, row_cfg) in &grid {
        for &seed in &cfg.ablate_seeds {
            let name = name.clone();
            let mut run_cfg = row_cfg.clone();
            run_cfg.seed = seed;
            tasks.push(Box::new(move || {
                let param_count = run_cfg
                    .network_spec()
                    .and_then(|spec| DuNet::new(spec, seed_for(run_cfg.seed, "init")))
                    .map(|net| net.trainable_param_count())
                    .unwrap_or(0);
                let miou = dataset_from_config(&run_cfg)
                    .and_then(|ds| fit(&run_cfg, &ds))
                    .map(|(_, outcome)| outcome.final_miou);
                match miou {
                    Ok(value) => AblationRow {
                        model_id: name,
                        seed,
                        miou: Some(value),
                        param_count,
                    },
                    Err(err) => {
                        eprintln!("ablate: {name} seed {seed} failed: {err}");
                        AblationRow {
                            model_id: name,
                            seed,
                            miou: None,
                            param_count,
                        }
                    }
                }
            }));
        }
    }
    let rows = sweep::run_parallel(tasks);
    let mut csv = String::from("model_id,seed,miou,param_count\n");
    for row in &rows {
        let miou = row.miou.map(|m| m.to_string()).unwrap_or_default();
        writeln!(csv, "{},{},{},{}", row.model_id, row.seed, miou, row.param_count).unwrap();
    }
    ensure_dir(&cfg.out)?;
    let path = cfg.out.join("ablation.csv");
    std::fs::write(&path, csv)?;
    Ok(path)
}

/// The analyzed map as a plain vector function plus its input width.
fn resolve_phi(cfg: &RunConfig) -> Result<(Box<dyn Fn(&[f64]) -> Vec<f64>>, usize)> {
    match &cfg.edge_phi {
        PhiSource::Fixed(w) => {
            let dim = cfg.edge_dim.max(1);
            let w = *w;
            Ok((
                Box::new(move |x: &[f64]| x.iter().map(|&v| w * v).collect()),
                dim,
            ))
        }
        PhiSource::Seeded(seed) => {
            let dim = cfg.edge_dim.max(1);
            let mut store = du_core::ParamStore::new();
            let mut rng = Rng::from_path(*seed, "edge.phi");
            let mlp =
                du_core::diffcore::Mlp::new(&mut store, "phi", &[dim, dim, dim], false, &mut rng)?;
            Ok((
                Box::new(move |x: &[f64]| mlp.eval_point(&store, x)),
                dim,
            ))
        }
        PhiSource::Checkpoint(stage) => {
            let checkpoint_path = cfg.out.join("checkpoint.txt");
            let net = load_net(cfg, &checkpoint_path)?;
            let (_, layer) = net.du_layer_at_stage(*stage).ok_or_else(|| {
                CoreError::InvalidArgument(format!(
                    "checkpoint has no diffusion unit at stage {stage}"
                ))
            })?;
            let mlp = layer.phi.clone().ok_or_else(|| {
                CoreError::InvalidArgument("the configured unit runs without phi".into())
            })?;
            let dim = layer.dim;
            let store = net.store.clone();
            Ok((
                Box::new(move |x: &[f64]| mlp.eval_point(&store, x)),
                dim,
            ))
        }
    }
}

/// Emit the step-edge profile, per-sample change rates, and per-channel
/// classification as one CSV.
pub fn cmd_analyze_edge(cfg: &RunConfig) -> Result<PathBuf> {
    let profile = step_edge_profile(cfg.edge_sigma, cfg.edge_halfwidth, cfg.edge_samples)?;
    let (phi, dim) = resolve_phi(cfg)?;
    let classes = classify_edge_behavior(phi.as_ref(), dim, &profile)?;
    let mut csv = String::from("channel,x,u,ux,uxx,uxxx,rate,classification\n");
    for (channel, class) in classes.iter().enumerate() {
        let rates = edge_change_rate(phi.as_ref(), dim, &profile, channel)?;
        for i in 0..profile.len() {
            writeln!(
                csv,
                "{},{},{},{},{},{},{},{}",
                channel,
                profile.xs[i],
                profile.u[i],
                profile.ux[i],
                profile.uxx[i],
                profile.uxxx[i],
                rates[i],
                class.as_str()
            )
            .unwrap();
        }
    }
    ensure_dir(&cfg.out)?;
    let path = cfg.out.join("edge_analysis.csv");
    std::fs::write(&path, csv)?;
    Ok(path)
}

#[derive(Clone, Debug, Serialize)]
pub struct SmoothnessReport {
    pub stage: usize,
    pub csv: PathBuf,
    pub ply_before: PathBuf,
    pub ply_after: PathBuf,
    pub ply_delta: PathBuf,
    /// Mean delta over label-boundary-band points, when labels exist.
    pub boundary_mean_delta: Option<f64>,
    /// Mean delta over the remaining interior points.
    pub interior_mean_delta: Option<f64>,
}

fn resolve_sample(cfg: &RunConfig) -> Result<PointCloud> {
    match &cfg.smoothness_sample {
        SampleRef::Path(p) => read_cloud(p),
        SampleRef::Test(i) => {
            let dataset = dataset_from_config(cfg)?;
            dataset
                .test
                .get(*i)
                .map(|&idx| dataset.samples[idx].clone())
                .ok_or_else(|| {
                    CoreError::IndexOutOfRange(format!("test sample {i} of {}", dataset.test.len()))
                })
        }
        SampleRef::Train(i) => {
            let dataset = dataset_from_config(cfg)?;
            dataset
                .train
                .get(*i)
                .map(|&idx| dataset.samples[idx].clone())
                .ok_or_else(|| {
                    CoreError::IndexOutOfRange(format!(
                        "train sample {i} of {}",
                        dataset.train.len()
                    ))
                })
        }
    }
}

/// Capture one decoder stage, compute per-point smoothness before and after
/// its block, and export the three scalar fields as CSV and PLY.
pub fn cmd_smoothness(cfg: &RunConfig, checkpoint_path: &Path) -> Result<SmoothnessReport> {
    let mut net = load_net(cfg, checkpoint_path)?;
    let cloud = resolve_sample(cfg)?;
    let stage = if cfg.smoothness_stage == 0 {
        net.spec.stages.len()
    } else {
        cfg.smoothness_stage
    };
    let mut graph = du_core::Graph::new();
    let (_, capture) = net.forward(&mut graph, &cloud, Mode::Eval, Some(stage))?;
    let capture = capture.ok_or_else(|| {
        CoreError::IndexOutOfRange(format!("capture stage {stage} produced no output"))
    })?;
    let kind = if cfg.smoothness_sum_of_norms {
        SmoothnessKind::SumOfNorms
    } else {
        SmoothnessKind::AggregateDifference
    };
    let before = local_smoothness(&capture.before, &capture.nbr, kind)?;
    let after = local_smoothness(&capture.after, &capture.nbr, kind)?;
    let delta = smoothness_delta(&capture.before, &capture.after, &capture.nbr, kind)?;
    ensure_dir(&cfg.out)?;
    let mut csv = String::from("x,y,z,before,after,delta\n");
    for (i, p) in capture.cloud.positions().iter().enumerate() {
        writeln!(
            csv,
            "{},{},{},{},{},{}",
            p[0], p[1], p[2], before[i], after[i], delta[i]
        )
        .unwrap();
    }
    let csv_path = cfg.out.join("smoothness.csv");
    std::fs::write(&csv_path, csv)?;
    let ply_before = cfg.out.join("smoothness_before.ply");
    let ply_after = cfg.out.join("smoothness_after.ply");
    let ply_delta = cfg.out.join("smoothness_delta.ply");
    write_scalar_ply(&ply_before, capture.cloud.positions(), "smoothness", &before)?;
    write_scalar_ply(&ply_after, capture.cloud.positions(), "smoothness", &after)?;
    write_scalar_ply(&ply_delta, capture.cloud.positions(), "smoothness", &delta)?;
    let (boundary_mean_delta, interior_mean_delta) = if capture.cloud.labels().is_some() {
        let band = label_boundary_band(&capture.cloud, 2.0)?;
        let (mut bsum, mut bcount, mut isum, mut icount) = (0.0, 0usize, 0.0, 0usize);
        for (i, &inside) in band.iter().enumerate() {
            if inside {
                bsum += delta[i];
                bcount += 1;
            } else {
                isum += delta[i];
                icount += 1;
            }
        }
        (
            (bcount > 0).then(|| bsum / bcount as f64),
            (icount > 0).then(|| isum / icount as f64),
        )
    } else {
        (None, None)
    };
    Ok(SmoothnessReport {
        stage,
        csv: csv_path,
        ply_before,
        ply_after,
        ply_delta,
        boundary_mean_delta,
        interior_mean_delta,
    })
}

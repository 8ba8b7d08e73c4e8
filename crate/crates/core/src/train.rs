//! Deterministic training loop: per-sample steps with optional
//! augmentation, cosine or constant learning rate, and pooled test
//! evaluation.

use crate::data::{augment, AugmentOps, Dataset};
use crate::diffcore::optim::{cosine_lr, AdamW, AdamWConfig, Sgd, SgdConfig};
use crate::diffcore::{Graph, Mode};
use crate::error::{CoreError, Result};
use crate::geom::PointCloud;
use crate::metrics::ConfusionCounts;
use crate::net::DuNet;
use crate::rng::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OptimizerKind {
    Sgd,
    AdamW,
}

#[derive(Clone, Copy, Debug)]
pub struct TrainConfig {
    pub epochs: usize,
    pub optimizer: OptimizerKind,
    pub lr: f64,
    pub weight_decay: f64,
    /// Momentum of the SGD variant; unused by AdamW.
    pub momentum: f64,
    pub label_smoothing: f64,
    pub cosine_schedule: bool,
    pub augment: Option<AugmentOps>,
    pub shuffle: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            optimizer: OptimizerKind::AdamW,
            lr: 0.01,
            weight_decay: 1e-4,
            momentum: 0.9,
            label_smoothing: 0.2,
            cosine_schedule: true,
            augment: Some(AugmentOps::default()),
            shuffle: true,
        }
    }
}

#[derive(Clone, Debug)]
pub struct EpochStats {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub test_miou: f64,
    pub test_accuracy: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub history: Vec<EpochStats>,
    pub final_miou: f64,
    pub final_accuracy: f64,
    pub per_class_iou: Vec<f64>,
}

enum Optimizer {
    Sgd(Sgd),
    AdamW(AdamW),
}

impl Optimizer {
    fn step(
        &mut self,
        store: &mut crate::diffcore::ParamStore,
        grads: &[Option<crate::diffcore::Tensor>],
        lr: f64,
    ) -> Result<()> {
        match self {
            Optimizer::Sgd(o) => o.step(store, grads, lr),
            Optimizer::AdamW(o) => o.step(store, grads, lr),
        }
    }
}

/// Run the full loop. Deterministic given (network seed, dataset, config,
/// seed): the shuffle and augmentation streams derive from `seed`.
pub fn train(
    net: &mut DuNet,
    dataset: &Dataset,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<TrainOutcome> {
    if cfg.epochs == 0 {
        return Err(CoreError::InvalidArgument(
            "training wants at least one epoch".into(),
        ));
    }
    if !(cfg.lr > 0.0) {
        return Err(CoreError::InvalidArgument(format!(
            "learning rate must be positive, got {}",
            cfg.lr
        )));
    }
    let mut optimizer = match cfg.optimizer {
        OptimizerKind::Sgd => Optimizer::Sgd(Sgd::new(
            SgdConfig {
                momentum: cfg.momentum,
                weight_decay: cfg.weight_decay,
            },
            &net.store,
        )),
        OptimizerKind::AdamW => Optimizer::AdamW(AdamW::new(
            AdamWConfig {
                weight_decay: cfg.weight_decay,
                ..AdamWConfig::default()
            },
            &net.store,
        )),
    };
    let total_steps = cfg.epochs * dataset.train.len();
    let mut step = 0usize;
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut order = dataset.train.clone();
        if cfg.shuffle {
            let mut rng = Rng::from_path_indexed(seed, "train.shuffle", epoch as u64);
            rng.shuffle(&mut order);
        }
        let mut epoch_loss = 0.0;
        let mut lr = cfg.lr;
        for &idx in &order {
            lr = if cfg.cosine_schedule {
                cosine_lr(step, total_steps, cfg.lr)?
            } else {
                cfg.lr
            };
            let sample = &dataset.samples[idx];
            let cloud = match &cfg.augment {
                Some(ops) => {
                    let aug_seed =
                        Rng::from_path_indexed(seed, "train.augment", step as u64).next_u64();
                    augment(sample, ops, aug_seed)?
                }
                None => sample.clone(),
            };
            let labels = cloud
                .labels()
                .ok_or_else(|| CoreError::InvalidArgument("training needs labels".into()))?
                .to_vec();
            let mut graph = Graph::new();
            let (logits, _) = net.forward(&mut graph, &cloud, Mode::Train, None)?;
            let loss = graph.cross_entropy_label_smoothing(logits, &labels, cfg.label_smoothing)?;
            epoch_loss += graph.value(loss).item()?;
            let grads = graph.backward(loss)?;
            let per_param = grads.param_grads(&net.store)?;
            optimizer.step(&mut net.store, &per_param, lr)?;
            step += 1;
        }
        let (miou, acc, _) = evaluate(net, dataset)?;
        history.push(EpochStats {
            epoch,
            lr,
            train_loss: epoch_loss / order.len().max(1) as f64,
            test_miou: miou,
            test_accuracy: acc,
        });
    }
    let (final_miou, final_accuracy, per_class_iou) = evaluate(net, dataset)?;
    Ok(TrainOutcome {
        history,
        final_miou,
        final_accuracy,
        per_class_iou,
    })
}

/// Pooled test-split evaluation: (mIoU, accuracy, per-class IoU).
pub fn evaluate(net: &mut DuNet, dataset: &Dataset) -> Result<(f64, f64, Vec<f64>)> {
    let mut counts = ConfusionCounts::new(dataset.num_classes);
    for cloud in dataset.test_samples() {
        accumulate_predictions(net, cloud, &mut counts)?;
    }
    Ok((counts.miou(), counts.accuracy(), counts.iou_per_class()))
}

/// Evaluate one labeled cloud into an existing count accumulator.
pub fn accumulate_predictions(
    net: &mut DuNet,
    cloud: &PointCloud,
    counts: &mut ConfusionCounts,
) -> Result<()> {
    let labels = cloud
        .labels()
        .ok_or_else(|| CoreError::InvalidArgument("evaluation needs labels".into()))?;
    let preds = net.predict(cloud)?;
    counts.update(&preds, labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{build_dataset, ShapeKind};
    use crate::net::{DecoderKind, DuNet, NetworkSpec, StageSpec};
    use crate::rng::Rng;

    fn small_spec(n: usize, input_dim: usize, num_classes: usize) -> NetworkSpec {
        let mut spec = NetworkSpec::toy(n, input_dim, num_classes, DecoderKind::Du);
        spec.stages = vec![
            StageSpec { points_out: n, channels: 8, k_encoder: 6 },
            StageSpec { points_out: n / 4, channels: 12, k_encoder: 6 },
        ];
        spec.du = crate::du::DuOptions { k: 6, ..Default::default() };
        spec.du_stages = vec![true, true];
        spec
    }

    /// A cleanly separable two-class feature field.
    fn separable_dataset(n: usize, samples: usize, test: usize) -> Dataset {
        let mut all = Vec::new();
        for s in 0..samples + test {
            let mut rng = Rng::from_path_indexed(99, "separable", s as u64);
            let mut positions = Vec::with_capacity(n);
            let mut features = Vec::with_capacity(n);
            let mut labels = Vec::with_capacity(n);
            for _ in 0..n {
                let x = rng.uniform(0.0, 2.0);
                let y = rng.uniform(0.0, 2.0);
                positions.push([x, y, 0.0]);
                let high = x >= 1.0;
                features.push(if high { 0.5 } else { -0.5 });
                labels.push(usize::from(high));
            }
            all.push(
                PointCloud::new(positions)
                    .unwrap()
                    .with_features(1, features)
                    .unwrap()
                    .with_labels(labels)
                    .unwrap(),
            );
        }
        Dataset {
            samples: all,
            num_classes: 2,
            train: (0..samples).collect(),
            test: (samples..samples + test).collect(),
        }
    }

    #[test]
    fn initial_loss_is_ln_c() {
        let ds = build_dataset(ShapeKind::PlaneWithBoxes, 64, 0.01, 3, 2, 1).unwrap();
        let mut net = DuNet::new(small_spec(64, 1, 3), 5).unwrap();
        let cloud = &ds.samples[0];
        let labels = cloud.labels().unwrap().to_vec();
        let mut graph = Graph::new();
        let (logits, _) = net.forward(&mut graph, cloud, Mode::Train, None).unwrap();
        let loss = graph
            .cross_entropy_label_smoothing(logits, &labels, 0.0)
            .unwrap();
        let got = graph.value(loss).item().unwrap();
        assert!((got - 3.0_f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn separable_data_trains_past_95_percent() {
        let ds = separable_dataset(96, 3, 2);
        let mut net = DuNet::new(small_spec(96, 2, 2), 40).unwrap();
        let cfg = TrainConfig {
            epochs: 30,
            augment: None,
            ..TrainConfig::default()
        };
        let outcome = train(&mut net, &ds, &cfg, 7).unwrap();
        assert!(
            outcome.final_accuracy > 0.95,
            "accuracy {}",
            outcome.final_accuracy
        );
        assert!(outcome.history.iter().all(|h| h.train_loss.is_finite()));
    }

    #[test]
    fn training_is_deterministic() {
        let ds = build_dataset(ShapeKind::StepField, 64, 0.01, 11, 2, 1).unwrap();
        let run = || {
            let mut net = DuNet::new(small_spec(64, 2, 2), 13).unwrap();
            let cfg = TrainConfig {
                epochs: 2,
                ..TrainConfig::default()
            };
            let out = train(&mut net, &ds, &cfg, 21).unwrap();
            (
                out.history
                    .iter()
                    .map(|h| h.train_loss.to_bits())
                    .collect::<Vec<_>>(),
                out.final_miou.to_bits(),
            )
        };
        assert_eq!(run(), run(), "two runs are bit-identical");
    }

    #[test]
    fn learning_rate_follows_cosine_schedule() {
        let ds = build_dataset(ShapeKind::StepField, 64, 0.01, 11, 2, 1).unwrap();
        let mut net = DuNet::new(small_spec(64, 2, 2), 13).unwrap();
        let cfg = TrainConfig {
            epochs: 3,
            ..TrainConfig::default()
        };
        let out = train(&mut net, &ds, &cfg, 2).unwrap();
        let lrs: Vec<f64> = out.history.iter().map(|h| h.lr).collect();
        assert!(lrs.windows(2).all(|w| w[1] < w[0]), "lr decays: {lrs:?}");
        assert!(lrs.last().unwrap() < &cfg.lr);
    }

    #[test]
    fn diverging_run_aborts_naming_the_operation() {
        let ds = build_dataset(ShapeKind::StepField, 64, 0.01, 11, 2, 1).unwrap();
        let mut net = DuNet::new(small_spec(64, 2, 2), 13).unwrap();
        let cfg = TrainConfig {
            epochs: 10,
            optimizer: OptimizerKind::Sgd,
            lr: 1e14,
            cosine_schedule: false,
            augment: None,
            ..TrainConfig::default()
        };
        match train(&mut net, &ds, &cfg, 3) {
            Err(crate::CoreError::NonFinite(op)) => {
                assert!(!op.is_empty(), "diagnostic names the operation")
            }
            other => panic!("expected a non-finite abort, got {other:?}"),
        }
    }

    #[test]
    fn rejects_degenerate_configs() {
        let ds = build_dataset(ShapeKind::StepField, 64, 0.01, 11, 2, 1).unwrap();
        let mut net = DuNet::new(small_spec(64, 2, 2), 13).unwrap();
        let bad_epochs = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        assert!(train(&mut net, &ds, &bad_epochs, 0).is_err());
        let bad_lr = TrainConfig {
            lr: 0.0,
            ..TrainConfig::default()
        };
        assert!(train(&mut net, &ds, &bad_lr, 0).is_err());
    }
}

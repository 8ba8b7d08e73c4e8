//! Run configuration: a flat `key = value` text format with dotted section
//! prefixes. A config plus a seed fully determines a run; the resolved
//! config is serialized next to every output for reproducibility.

use du_core::data::ShapeKind;
use du_core::du::{DuOptions, EdgeFeature};
use du_core::net::{DecoderKind, NetworkSpec, StageSpec};
use du_core::train::{OptimizerKind, TrainConfig};
use du_core::{CoreError, Result};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

/// Source of the map analyzed by `analyze-edge`.
#[derive(Clone, Debug, PartialEq)]
pub enum PhiSource {
    /// A fixed linear map w * identity.
    Fixed(f64),
    /// A randomly initialized MLP drawn from the given stream.
    Seeded(u64),
    /// The phi of the diffusion unit at the given decoder stage (1-based;
    /// 0 means the last stage) of the run checkpoint.
    Checkpoint(usize),
}

impl PhiSource {
    fn parse(text: &str) -> Result<Self> {
        let (kind, arg) = text.split_once(':').unwrap_or((text, ""));
        match kind {
            "fixed" => Ok(PhiSource::Fixed(arg.parse().map_err(|_| {
                CoreError::InvalidArgument(format!("bad fixed phi weight {arg}"))
            })?)),
            "seed" => Ok(PhiSource::Seeded(arg.parse().map_err(|_| {
                CoreError::InvalidArgument(format!("bad phi seed {arg}"))
            })?)),
            "checkpoint" => {
                let stage = if arg.is_empty() {
                    0
                } else {
                    arg.parse().map_err(|_| {
                        CoreError::InvalidArgument(format!("bad checkpoint stage {arg}"))
                    })?
                };
                Ok(PhiSource::Checkpoint(stage))
            }
            other => Err(CoreError::InvalidArgument(format!(
                "unknown phi source {other} (expected fixed:<w>, seed:<n>, checkpoint[:stage])"
            ))),
        }
    }

    fn serialize(&self) -> String {
        match self {
            PhiSource::Fixed(w) => format!("fixed:{w}"),
            PhiSource::Seeded(s) => format!("seed:{s}"),
            PhiSource::Checkpoint(stage) => format!("checkpoint:{stage}"),
        }
    }
}

/// Where `smoothness` takes its input cloud from.
#[derive(Clone, Debug, PartialEq)]
pub enum SampleRef {
    Test(usize),
    Train(usize),
    Path(PathBuf),
}

impl SampleRef {
    pub fn parse(text: &str) -> Self {
        if let Some(arg) = text.strip_prefix("test:") {
            if let Ok(i) = arg.parse() {
                return SampleRef::Test(i);
            }
        }
        if let Some(arg) = text.strip_prefix("train:") {
            if let Ok(i) = arg.parse() {
                return SampleRef::Train(i);
            }
        }
        SampleRef::Path(PathBuf::from(text))
    }

    fn serialize(&self) -> String {
        match self {
            SampleRef::Test(i) => format!("test:{i}"),
            SampleRef::Train(i) => format!("train:{i}"),
            SampleRef::Path(p) => p.display().to_string(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub out: PathBuf,

    pub recipe: ShapeKind,
    pub n: usize,
    pub noise_sigma: f64,
    pub train_samples: usize,
    pub test_samples: usize,

    pub augment_enabled: bool,
    pub scale_min: f64,
    pub scale_max: f64,
    pub translate: f64,
    pub jitter_sigma: f64,
    pub vertical_rotation: bool,

    pub net_stages: usize,
    pub net_widths: Vec<usize>,
    pub net_ratio: usize,
    pub k_encoder: usize,
    pub decoder: DecoderKind,
    /// Decoder stages carrying a diffusion unit: empty means "follow
    /// decoder kind" (all stages for du, none for fp).
    pub du_stage_list: Option<Vec<usize>>,
    pub encoder_du: bool,
    pub identity_init: bool,

    pub du_k: usize,
    pub du_edge_feature: EdgeFeature,
    pub du_use_phi: bool,
    pub du_use_varphi: bool,
    pub du_average: bool,
    /// 0 = none; 1..=8 overrides the unit switches with the ablation row.
    pub ablation_model: u8,

    pub epochs: usize,
    pub optimizer: OptimizerKind,
    pub lr: f64,
    pub weight_decay: f64,
    pub momentum: f64,
    pub label_smoothing: f64,
    pub cosine_schedule: bool,

    pub ablate_seeds: Vec<u64>,

    pub edge_sigma: f64,
    pub edge_halfwidth: f64,
    pub edge_samples: usize,
    pub edge_phi: PhiSource,
    pub edge_dim: usize,

    /// 0 means the last decoder stage.
    pub smoothness_stage: usize,
    pub smoothness_sample: SampleRef,
    pub smoothness_sum_of_norms: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            out: PathBuf::from("runs/default"),
            recipe: ShapeKind::TwoPartCylinder,
            n: 512,
            noise_sigma: 0.02,
            train_samples: 6,
            test_samples: 3,
            augment_enabled: true,
            scale_min: 0.66,
            scale_max: 1.5,
            translate: 0.2,
            jitter_sigma: 0.01,
            vertical_rotation: true,
            net_stages: 4,
            net_widths: vec![32, 64, 128, 256],
            net_ratio: 4,
            k_encoder: 16,
            decoder: DecoderKind::Du,
            du_stage_list: None,
            encoder_du: false,
            identity_init: false,
            du_k: 16,
            du_edge_feature: EdgeFeature::Difference,
            du_use_phi: true,
            du_use_varphi: true,
            du_average: true,
            ablation_model: 0,
            epochs: 50,
            optimizer: OptimizerKind::AdamW,
            lr: 0.01,
            weight_decay: 1e-4,
            momentum: 0.9,
            label_smoothing: 0.2,
            cosine_schedule: true,
            ablate_seeds: vec![0],
            edge_sigma: 1.0,
            edge_halfwidth: 6.0,
            edge_samples: 129,
            edge_phi: PhiSource::Fixed(-1.0),
            edge_dim: 1,
            smoothness_stage: 0,
            smoothness_sample: SampleRef::Test(0),
            smoothness_sum_of_norms: false,
        }
    }
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" => Ok(true),
        "false" => Ok(false),
        other => Err(CoreError::InvalidArgument(format!(
            "{key}: expected true or false, got {other}"
        ))),
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| {
        CoreError::InvalidArgument(format!("{key}: cannot parse {v:?}"))
    })
}

fn parse_list<T: std::str::FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse()
                .map_err(|_| CoreError::InvalidArgument(format!("{key}: cannot parse {s:?}")))
        })
        .collect()
}

impl RunConfig {
    /// Parse the `key = value` text; unknown keys are errors. Missing keys
    /// keep their defaults.
    pub fn parse(text: &str) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        let mut seen = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let lineno = idx + 1;
            let Some((key, value)) = line.split_once('=') else {
                return Err(CoreError::Parse {
                    line: lineno,
                    msg: format!("expected key = value, got {line:?}"),
                });
            };
            let key = key.trim();
            let value = value.trim();
            if seen.insert(key.to_string(), lineno).is_some() {
                return Err(CoreError::Parse {
                    line: lineno,
                    msg: format!("duplicate key {key}"),
                });
            }
            cfg.apply(key, value).map_err(|e| CoreError::Parse {
                line: lineno,
                msg: e.to_string(),
            })?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)?;
        RunConfig::parse(&text)
    }

    fn apply(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "seed" => self.seed = parse_num(key, v)?,
            "out" => self.out = PathBuf::from(v),
            "data.recipe" => self.recipe = ShapeKind::parse(v)?,
            "data.n" => self.n = parse_num(key, v)?,
            "data.noise_sigma" => self.noise_sigma = parse_num(key, v)?,
            "data.train_samples" => self.train_samples = parse_num(key, v)?,
            "data.test_samples" => self.test_samples = parse_num(key, v)?,
            "augment.enabled" => self.augment_enabled = parse_bool(key, v)?,
            "augment.scale_min" => self.scale_min = parse_num(key, v)?,
            "augment.scale_max" => self.scale_max = parse_num(key, v)?,
            "augment.translate" => self.translate = parse_num(key, v)?,
            "augment.jitter_sigma" => self.jitter_sigma = parse_num(key, v)?,
            "augment.vertical_rotation" => self.vertical_rotation = parse_bool(key, v)?,
            "net.stages" => self.net_stages = parse_num(key, v)?,
            "net.widths" => self.net_widths = parse_list(key, v)?,
            "net.ratio" => self.net_ratio = parse_num(key, v)?,
            "net.k_encoder" => self.k_encoder = parse_num(key, v)?,
            "net.decoder" => {
                self.decoder = match v {
                    "du" => DecoderKind::Du,
                    "fp" => DecoderKind::FeaturePropagationOnly,
                    other => {
                        return Err(CoreError::InvalidArgument(format!(
                            "net.decoder: expected du or fp, got {other}"
                        )))
                    }
                }
            }
            "net.du_stages" => {
                self.du_stage_list = match v {
                    "all" => None,
                    "none" => Some(vec![]),
                    list => Some(parse_list(key, list)?),
                }
            }
            "net.encoder_du" => self.encoder_du = parse_bool(key, v)?,
            "net.identity_init" => self.identity_init = parse_bool(key, v)?,
            "du.k" => self.du_k = parse_num(key, v)?,
            "du.edge_feature" => {
                self.du_edge_feature = match v {
                    "difference" => EdgeFeature::Difference,
                    "neighbor" => EdgeFeature::Neighbor,
                    other => {
                        return Err(CoreError::InvalidArgument(format!(
                            "du.edge_feature: expected difference or neighbor, got {other}"
                        )))
                    }
                }
            }
            "du.use_phi" => self.du_use_phi = parse_bool(key, v)?,
            "du.use_varphi" => self.du_use_varphi = parse_bool(key, v)?,
            "du.average" => self.du_average = parse_bool(key, v)?,
            "du.ablation_model" => self.ablation_model = parse_num(key, v)?,
            "train.epochs" => self.epochs = parse_num(key, v)?,
            "train.optimizer" => {
                self.optimizer = match v {
                    "adamw" => OptimizerKind::AdamW,
                    "sgd" => OptimizerKind::Sgd,
                    other => {
                        return Err(CoreError::InvalidArgument(format!(
                            "train.optimizer: expected adamw or sgd, got {other}"
                        )))
                    }
                }
            }
            "train.lr" => self.lr = parse_num(key, v)?,
            "train.weight_decay" => self.weight_decay = parse_num(key, v)?,
            "train.momentum" => self.momentum = parse_num(key, v)?,
            "train.label_smoothing" => self.label_smoothing = parse_num(key, v)?,
            "train.schedule" => {
                self.cosine_schedule = match v {
                    "cosine" => true,
                    "constant" => false,
                    other => {
                        return Err(CoreError::InvalidArgument(format!(
                            "train.schedule: expected cosine or constant, got {other}"
                        )))
                    }
                }
            }
            "ablate.seeds" => self.ablate_seeds = parse_list(key, v)?,
            "edge.sigma" => self.edge_sigma = parse_num(key, v)?,
            "edge.halfwidth" => self.edge_halfwidth = parse_num(key, v)?,
            "edge.samples" => self.edge_samples = parse_num(key, v)?,
            "edge.phi" => self.edge_phi = PhiSource::parse(v)?,
            "edge.dim" => self.edge_dim = parse_num(key, v)?,
            "smoothness.stage" => self.smoothness_stage = parse_num(key, v)?,
            "smoothness.sample" => self.smoothness_sample = SampleRef::parse(v),
            "smoothness.kind" => {
                self.smoothness_sum_of_norms = match v {
                    "formula" => false,
                    "prose" => true,
                    other => {
                        return Err(CoreError::InvalidArgument(format!(
                            "smoothness.kind: expected formula or prose, got {other}"
                        )))
                    }
                }
            }
            other => {
                return Err(CoreError::InvalidArgument(format!("unknown key {other}")))
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.net_widths.len() != self.net_stages {
            return Err(CoreError::InvalidArgument(format!(
                "net.widths lists {} entries for {} stages",
                self.net_widths.len(),
                self.net_stages
            )));
        }
        if self.net_ratio == 0 || self.net_stages == 0 {
            return Err(CoreError::InvalidArgument(
                "net.ratio and net.stages must be positive".into(),
            ));
        }
        if let Some(list) = &self.du_stage_list {
            for &s in list {
                if s == 0 || s > self.net_stages {
                    return Err(CoreError::InvalidArgument(format!(
                        "net.du_stages entry {s} outside 1..={}",
                        self.net_stages
                    )));
                }
            }
        }
        if self.ablation_model > 8 {
            return Err(CoreError::InvalidArgument(format!(
                "du.ablation_model {} outside 0..=8",
                self.ablation_model
            )));
        }
        Ok(())
    }

    /// Canonical serialized form: every key, fixed order.
    pub fn serialize(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| writeln!(s, "{k} = {v}").unwrap();
        kv("seed", self.seed.to_string());
        kv("out", self.out.display().to_string());
        kv("data.recipe", self.recipe.as_str().to_string());
        kv("data.n", self.n.to_string());
        kv("data.noise_sigma", self.noise_sigma.to_string());
        kv("data.train_samples", self.train_samples.to_string());
        kv("data.test_samples", self.test_samples.to_string());
        kv("augment.enabled", self.augment_enabled.to_string());
        kv("augment.scale_min", self.scale_min.to_string());
        kv("augment.scale_max", self.scale_max.to_string());
        kv("augment.translate", self.translate.to_string());
        kv("augment.jitter_sigma", self.jitter_sigma.to_string());
        kv("augment.vertical_rotation", self.vertical_rotation.to_string());
        kv("net.stages", self.net_stages.to_string());
        kv(
            "net.widths",
            self.net_widths
                .iter()
                .map(ToString::to_string)
                .collect::<Vec<_>>()
                .join(","),
        );
        kv("net.ratio", self.net_ratio.to_string());
        kv("net.k_encoder", self.k_encoder.to_string());
        kv(
            "net.decoder",
            match self.decoder {
                DecoderKind::Du => "du".to_string(),
                DecoderKind::FeaturePropagationOnly => "fp".to_string(),
            },
        );
        kv(
            "net.du_stages",
            match &self.du_stage_list {
                None => "all".to_string(),
                Some(list) if list.is_empty() => "none".to_string(),
                Some(list) => list
                    .iter()
                    .map(ToString::to_string)
                    .collect::<Vec<_>>()
                    .join(","),
            },
        );
        kv("net.encoder_du", self.encoder_du.to_string());
        kv("net.identity_init", self.identity_init.to_string());
        kv("du.k", self.du_k.to_string());
        kv(
            "du.edge_feature",
            match self.du_edge_feature {
                EdgeFeature::Difference => "difference".to_string(),
                EdgeFeature::Neighbor => "neighbor".to_string(),
            },
        );
        kv("du.use_phi", self.du_use_phi.to_string());
        kv("du.use_varphi", self.du_use_varphi.to_string());
        kv("du.average", self.du_average.to_string());
        kv("du.ablation_model", self.ablation_model.to_string());
        kv("train.epochs", self.epochs.to_string());
        kv(
            "train.optimizer",
            match self.optimizer {
                OptimizerKind::AdamW => "adamw".to_string(),
                OptimizerKind::Sgd => "sgd".to_string(),
            },
        );
        kv("train.lr", self.lr.to_string());
        kv("train.weight_decay", self.weight_decay.to_string());
        kv("train.momentum", self.momentum.to_string());
        kv("train.label_smoothing", self.label_smoothing.to_string());
        kv(
            "train.schedule",
            if self.cosine_schedule { "cosine" } else { "constant" }.to_string(),
        );
        kv(
            "ablate.seeds",
            self.ablate_seeds
                .iter()
                .map(ToString::to_string)
                .collect::<Vec<_>>()
                .join(","),
        );
        kv("edge.sigma", self.edge_sigma.to_string());
        kv("edge.halfwidth", self.edge_halfwidth.to_string());
        kv("edge.samples", self.edge_samples.to_string());
        kv("edge.phi", self.edge_phi.serialize());
        kv("edge.dim", self.edge_dim.to_string());
        kv("smoothness.stage", self.smoothness_stage.to_string());
        kv("smoothness.sample", self.smoothness_sample.serialize());
        kv(
            "smoothness.kind",
            if self.smoothness_sum_of_norms { "prose" } else { "formula" }.to_string(),
        );
        s
    }

    /// Per-point input width of the network for this recipe.
    pub fn input_dim(&self) -> usize {
        1 + self.recipe.feature_dim()
    }

    /// The unit switch settings, after applying any ablation row.
    pub fn du_options(&self) -> Result<DuOptions> {
        let mut options = DuOptions {
            k: self.du_k,
            edge_feature: self.du_edge_feature,
            use_phi: self.du_use_phi,
            use_varphi: self.du_use_varphi,
            average: self.du_average,
            phi_hidden: None,
            zero_init: false,
        };
        if self.ablation_model != 0 {
            let row = du_core::du::du_ablation(self.ablation_model)?;
            options.k = row.k;
            options.edge_feature = row.edge_feature;
            options.use_phi = row.use_phi;
            options.use_varphi = row.use_varphi;
        }
        Ok(options)
    }

    /// Materialize the architecture for this config.
    pub fn network_spec(&self) -> Result<NetworkSpec> {
        let mut stages = Vec::with_capacity(self.net_stages);
        let mut points = self.n;
        for (i, &width) in self.net_widths.iter().enumerate() {
            if i > 0 {
                points = (points / self.net_ratio).max(1);
            }
            stages.push(StageSpec {
                points_out: points,
                channels: width,
                k_encoder: self.k_encoder,
            });
        }
        let du_stages = match (&self.du_stage_list, self.decoder) {
            (Some(list), _) => (1..=self.net_stages).map(|s| list.contains(&s)).collect(),
            (None, DecoderKind::Du) => vec![true; self.net_stages],
            (None, DecoderKind::FeaturePropagationOnly) => vec![false; self.net_stages],
        };
        let spec = NetworkSpec {
            stages,
            du_stages,
            du: self.du_options()?,
            encoder_du: self.encoder_du,
            identity_init_blocks: self.identity_init,
            num_classes: self.recipe.num_classes(),
            input_dim: self.input_dim(),
            interp_k: 3,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn train_config(&self) -> TrainConfig {
        let augment = if self.augment_enabled {
            Some(du_core::data::AugmentOps {
                scale: Some((self.scale_min, self.scale_max)),
                translate: Some(self.translate),
                jitter_sigma: Some(self.jitter_sigma),
                vertical_rotation: self.vertical_rotation,
            })
        } else {
            None
        };
        TrainConfig {
            epochs: self.epochs,
            optimizer: self.optimizer,
            lr: self.lr,
            weight_decay: self.weight_decay,
            momentum: self.momentum,
            label_smoothing: self.label_smoothing,
            cosine_schedule: self.cosine_schedule,
            augment,
            shuffle: true,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = RunConfig::default();
        let text = cfg.serialize();
        let back = RunConfig::parse(&text).unwrap();
        assert_eq!(back, cfg);
        // And the round trip is idempotent at the byte level.
        assert_eq!(back.serialize(), text);
    }

    #[test]
    fn modified_config_round_trips() {
        let mut cfg = RunConfig::default();
        cfg.seed = 97;
        cfg.recipe = ShapeKind::StepField;
        cfg.decoder = DecoderKind::FeaturePropagationOnly;
        cfg.du_stage_list = Some(vec![2, 4]);
        cfg.ablate_seeds = vec![1, 2, 3];
        cfg.edge_phi = PhiSource::Seeded(5);
        cfg.smoothness_sample = SampleRef::Train(1);
        let back = RunConfig::parse(&cfg.serialize()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn unknown_keys_and_bad_values_are_rejected() {
        assert!(RunConfig::parse("nonsense.key = 3\n").is_err());
        assert!(RunConfig::parse("data.n = many\n").is_err());
        assert!(RunConfig::parse("data.recipe = sphere\n").is_err());
        assert!(RunConfig::parse("seed - 3\n").is_err());
        assert!(RunConfig::parse("seed = 1\nseed = 2\n").is_err());
    }

    #[test]
    fn comments_and_blank_lines_are_ignored() {
        let cfg = RunConfig::parse("# a comment\n\nseed = 9 # trailing\n").unwrap();
        assert_eq!(cfg.seed, 9);
    }

    #[test]
    fn ablation_model_overrides_du_switches() {
        let mut cfg = RunConfig::default();
        cfg.ablation_model = 5;
        let options = cfg.du_options().unwrap();
        assert_eq!(options.k, 8);
        cfg.ablation_model = 8;
        let options = cfg.du_options().unwrap();
        assert_eq!(options.edge_feature, EdgeFeature::Neighbor);
    }

    #[test]
    fn network_spec_matches_resolution_schedule() {
        let cfg = RunConfig::default();
        let spec = cfg.network_spec().unwrap();
        let pts: Vec<usize> = spec.stages.iter().map(|s| s.points_out).collect();
        assert_eq!(pts, vec![512, 128, 32, 8]);
        assert_eq!(spec.num_classes, 2);
        assert_eq!(spec.input_dim, 1);
    }

    #[test]
    fn stage_list_translates_to_mask() {
        let mut cfg = RunConfig::default();
        cfg.du_stage_list = Some(vec![2]);
        let spec = cfg.network_spec().unwrap();
        assert_eq!(spec.du_stages, vec![false, true, false, false]);
        cfg.du_stage_list = Some(vec![9]);
        assert!(cfg.validate().is_err());
    }
}

//! A compact encoder/decoder segmentation network built around diffusion
//! units.
//!
//! The encoder alternates a local aggregation block (neighbor features
//! concatenated with relative positions, shared linear, ReLU, max-pool) with
//! farthest-point downsampling. The decoder walks back up through the
//! resolutions: inverse-distance upsampling, skip concatenation, a linear
//! projection, and one per-stage block: either a diffusion unit or a
//! pointwise residual MLP (the plain baseline). Stage blocks are selectable
//! per stage, which yields the stage-placement comparison grid.
//!
//! All components are permutation-equivariant: reordering the input points
//! reorders the logits identically. The farthest-point seed is the
//! lexicographically smallest position, so the sampled subset is a property
//! of the point set, not of its ordering.

use crate::diffcore::{Graph, LinearInit, LinearLayer, Mlp, Mode, ParamStore, Tensor, Var};
use crate::du::{DuLayer, DuOptions};
use crate::error::{CoreError, Result};
use crate::geom::{
    farthest_point_sample, interp_weights, knn_graph, lexicographic_min_index, NeighborIndex,
    PointCloud,
};
use crate::rng::Rng;

/// One encoder stage: resolution after downsampling, feature width, and the
/// neighborhood size of the aggregation block.
#[derive(Clone, Copy, Debug)]
pub struct StageSpec {
    pub points_out: usize,
    pub channels: usize,
    pub k_encoder: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DecoderKind {
    Du,
    FeaturePropagationOnly,
}

/// Full architecture description.
#[derive(Clone, Debug)]
pub struct NetworkSpec {
    pub stages: Vec<StageSpec>,
    /// Which decoder stages carry a diffusion unit; stages without one get
    /// the pointwise baseline block. Stage 1 is the coarsest, the last stage
    /// sits at full resolution next to the classification head.
    pub du_stages: Vec<bool>,
    pub du: DuOptions,
    /// Optional diffusion unit after each encoder aggregation block.
    pub encoder_du: bool,
    /// Zero-initialize the output layer of every decoder stage block, which
    /// makes each block (diffusion unit or pointwise baseline) the exact
    /// identity map at construction.
    pub identity_init_blocks: bool,
    pub num_classes: usize,
    /// Width of the raw per-point input features (a constant channel plus
    /// any recipe feature channels).
    pub input_dim: usize,
    /// Upsampling stencil size.
    pub interp_k: usize,
}

impl NetworkSpec {
    /// Default desk-scale layout: four stages, widths 32/64/128/256,
    /// resolution ratio 1/4 after the first stage, encoder k = 16.
    pub fn toy(n: usize, input_dim: usize, num_classes: usize, kind: DecoderKind) -> Self {
        let stages = vec![
            StageSpec { points_out: n, channels: 32, k_encoder: 16 },
            StageSpec { points_out: n / 4, channels: 64, k_encoder: 16 },
            StageSpec { points_out: n / 16, channels: 128, k_encoder: 16 },
            StageSpec { points_out: n / 64, channels: 256, k_encoder: 16 },
        ];
        let du_stages = match kind {
            DecoderKind::Du => vec![true; 4],
            DecoderKind::FeaturePropagationOnly => vec![false; 4],
        };
        NetworkSpec {
            stages,
            du_stages,
            du: DuOptions::default(),
            encoder_du: false,
            identity_init_blocks: false,
            num_classes,
            input_dim,
            interp_k: 3,
        }
    }

    pub fn decoder_kind(&self) -> DecoderKind {
        if self.du_stages.iter().any(|&b| b) {
            DecoderKind::Du
        } else {
            DecoderKind::FeaturePropagationOnly
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.stages.is_empty() {
            return Err(CoreError::InvalidArgument("network needs stages".into()));
        }
        if self.du_stages.len() != self.stages.len() {
            return Err(CoreError::ShapeMismatch(format!(
                "{} stage flags for {} stages",
                self.du_stages.len(),
                self.stages.len()
            )));
        }
        for w in self.stages.windows(2) {
            if w[1].points_out > w[0].points_out {
                return Err(CoreError::InvalidArgument(
                    "stage resolutions must be nonincreasing".into(),
                ));
            }
            if w[1].channels < w[0].channels {
                return Err(CoreError::InvalidArgument(
                    "stage widths must be nondecreasing".into(),
                ));
            }
        }
        if self.num_classes == 0 || self.input_dim == 0 || self.interp_k == 0 {
            return Err(CoreError::InvalidArgument(
                "classes, input width, and interpolation size must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Raw per-point input features: a constant one channel followed by the
/// cloud's own feature channels. Geometry enters through relative positions
/// only, so the features are translation-invariant.
pub fn input_features(cloud: &PointCloud) -> Tensor {
    let n = cloud.len();
    let d = 1 + cloud.feature_dim();
    let mut data = vec![0.0; n * d];
    for i in 0..n {
        data[i * d] = 1.0;
        if let Some(row) = cloud.feature_row(i) {
            data[i * d + 1..(i + 1) * d].copy_from_slice(row);
        }
    }
    Tensor::from_vec(&[n, d], data).expect("consistent feature buffer")
}

/// Pointwise residual MLP: x + mlp(x), the non-edge-aware baseline block.
/// Zero-initialized final layer makes it the identity at construction.
#[derive(Clone, Debug)]
struct ResidualMlp {
    mlp: Mlp,
}

impl ResidualMlp {
    fn new(
        store: &mut ParamStore,
        name: &str,
        dim: usize,
        zero_init: bool,
        rng: &mut Rng,
    ) -> Result<Self> {
        Ok(ResidualMlp {
            mlp: Mlp::new(store, name, &[dim, dim, dim], zero_init, rng)?,
        })
    }

    fn forward(&self, graph: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let h = self.mlp.forward(graph, store, x)?;
        graph.add(x, h)
    }

    fn param_count(&self) -> usize {
        self.mlp.param_count()
    }
}

#[derive(Clone, Debug)]
enum StageBlock {
    Du(DuLayer),
    Fp(ResidualMlp),
}

impl StageBlock {
    fn param_count(&self) -> usize {
        match self {
            StageBlock::Du(du) => du.param_count(),
            StageBlock::Fp(fp) => fp.param_count(),
        }
    }
}

#[derive(Clone, Debug)]
struct EncoderStage {
    linear: LinearLayer,
    du: Option<DuLayer>,
}

#[derive(Clone, Debug)]
struct DecoderStage {
    proj: LinearLayer,
    block: StageBlock,
    /// Neighborhood size after clamping to the stage resolution.
    k_used: usize,
}

/// Features captured around one decoder block, for the smoothness
/// diagnostics.
#[derive(Clone, Debug)]
pub struct StageCapture {
    /// 1-based decoder stage index.
    pub stage: usize,
    pub cloud: PointCloud,
    pub nbr: NeighborIndex,
    pub before: Tensor,
    pub after: Tensor,
}

/// The assembled network: encoder stages, decoder stages, classification
/// head, and the parameter store that owns every tensor.
#[derive(Clone, Debug)]
pub struct DuNet {
    pub spec: NetworkSpec,
    pub store: ParamStore,
    encoder: Vec<EncoderStage>,
    decoder: Vec<DecoderStage>,
    head: LinearLayer,
    /// (stage, requested k, used k) wherever the stencil had to shrink.
    pub k_clamps: Vec<(usize, usize, usize)>,
}

impl DuNet {
    /// Build a network with parameters initialized from per-component seed
    /// streams, so two specs sharing a component path share its initial
    /// values exactly.
    pub fn new(spec: NetworkSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let s = spec.stages.len();
        let mut store = ParamStore::new();
        let mut encoder = Vec::with_capacity(s);
        let mut k_clamps = Vec::new();
        let mut d_in = spec.input_dim;
        for (i, stage) in spec.stages.iter().enumerate() {
            let mut rng = Rng::from_path(seed, &format!("enc.{i}"));
            let linear = LinearLayer::new(
                &mut store,
                &format!("enc.{i}.agg"),
                d_in + 3,
                stage.channels,
                LinearInit::FanIn,
                &mut rng,
            )?;
            let du = if spec.encoder_du {
                let mut du_rng = Rng::from_path(seed, &format!("enc.{i}.du"));
                Some(DuLayer::new(
                    &mut store,
                    &format!("enc.{i}.du"),
                    stage.channels,
                    spec.du,
                    &mut du_rng,
                )?)
            } else {
                None
            };
            encoder.push(EncoderStage { linear, du });
            d_in = stage.channels;
        }
        let mut decoder = Vec::with_capacity(s);
        let mut d_cur = spec.stages[s - 1].channels;
        for j in 0..s {
            let target_level = s - 1 - j;
            let d_skip = if target_level == 0 {
                spec.input_dim
            } else {
                spec.stages[target_level - 1].channels
            };
            let width = spec.stages[target_level.max(1) - 1].channels;
            let n_target = if target_level == 0 {
                spec.stages[0].points_out
            } else {
                spec.stages[target_level - 1].points_out
            };
            let mut rng = Rng::from_path(seed, &format!("dec.{j}.proj"));
            let proj = LinearLayer::new(
                &mut store,
                &format!("dec.{j}.proj"),
                d_cur + d_skip,
                width,
                LinearInit::FanIn,
                &mut rng,
            )?;
            let requested_k = spec.du.k;
            let k_used = requested_k.min(n_target.saturating_sub(1)).max(1);
            if k_used != requested_k {
                k_clamps.push((j + 1, requested_k, k_used));
            }
            let block = if spec.du_stages[j] {
                let mut du_rng = Rng::from_path(seed, &format!("dec.{j}.du"));
                let options = DuOptions {
                    k: k_used,
                    zero_init: spec.identity_init_blocks || spec.du.zero_init,
                    ..spec.du
                };
                StageBlock::Du(DuLayer::new(
                    &mut store,
                    &format!("dec.{j}.du"),
                    width,
                    options,
                    &mut du_rng,
                )?)
            } else {
                let mut fp_rng = Rng::from_path(seed, &format!("dec.{j}.fp"));
                StageBlock::Fp(ResidualMlp::new(
                    &mut store,
                    &format!("dec.{j}.fp"),
                    width,
                    spec.identity_init_blocks,
                    &mut fp_rng,
                )?)
            };
            decoder.push(DecoderStage { proj, block, k_used });
            d_cur = width;
        }
        let mut head_rng = Rng::from_path(seed, "head");
        let head = LinearLayer::new(
            &mut store,
            "head",
            d_cur,
            spec.num_classes,
            LinearInit::Zero,
            &mut head_rng,
        )?;
        Ok(DuNet {
            spec,
            store,
            encoder,
            decoder,
            head,
            k_clamps,
        })
    }

    pub fn trainable_param_count(&self) -> usize {
        self.store.trainable_param_count()
    }

    /// The diffusion unit at a 1-based decoder stage, or the last stage
    /// carrying one when `stage` is 0. Returns the resolved stage index.
    pub fn du_layer_at_stage(&self, stage: usize) -> Option<(usize, &DuLayer)> {
        if stage == 0 {
            self.decoder
                .iter()
                .enumerate()
                .rev()
                .find_map(|(j, d)| match &d.block {
                    StageBlock::Du(du) => Some((j + 1, du)),
                    StageBlock::Fp(_) => None,
                })
        } else {
            match self.decoder.get(stage - 1).map(|d| &d.block) {
                Some(StageBlock::Du(du)) => Some((stage, du)),
                _ => None,
            }
        }
    }

    /// Trainable parameters inside the decoder stage blocks only.
    pub fn block_param_count(&self) -> usize {
        self.decoder.iter().map(|d| d.block.param_count()).sum()
    }

    /// Full forward pass to per-point class logits inside a caller-visible
    /// graph, optionally capturing one decoder stage.
    pub fn forward(
        &mut self,
        graph: &mut Graph,
        cloud: &PointCloud,
        mode: Mode,
        capture_stage: Option<usize>,
    ) -> Result<(Var, Option<StageCapture>)> {
        if let Some(stage) = capture_stage {
            if stage == 0 || stage > self.spec.stages.len() {
                return Err(CoreError::IndexOutOfRange(format!(
                    "capture stage {stage} of {}",
                    self.spec.stages.len()
                )));
            }
        }
        let DuNet {
            spec,
            store,
            encoder,
            decoder,
            head,
            ..
        } = self;
        let levels = encode_levels(spec, encoder, graph, store, cloud, mode)?;
        let (feat, capture) =
            decode_levels(spec, decoder, graph, store, &levels, mode, capture_stage)?;
        let logits = head.forward(graph, store, feat)?;
        Ok((logits, capture))
    }

    /// Per-stage encoder outputs as plain tensors (diagnostics and tests).
    pub fn encode_only(
        &mut self,
        cloud: &PointCloud,
        mode: Mode,
    ) -> Result<Vec<(PointCloud, Tensor)>> {
        let mut graph = Graph::new();
        let DuNet {
            spec,
            store,
            encoder,
            ..
        } = self;
        let levels = encode_levels(spec, encoder, &mut graph, store, cloud, mode)?;
        Ok(levels
            .into_iter()
            .map(|(c, v)| (c, graph.value(v).clone()))
            .collect())
    }

    /// Logits as a plain tensor.
    pub fn segment(&mut self, cloud: &PointCloud, mode: Mode) -> Result<Tensor> {
        let mut graph = Graph::new();
        let (logits, _) = self.forward(&mut graph, cloud, mode, None)?;
        Ok(graph.value(logits).clone())
    }

    /// Argmax class per point in eval mode.
    pub fn predict(&mut self, cloud: &PointCloud) -> Result<Vec<usize>> {
        let logits = self.segment(cloud, Mode::Eval)?;
        let c = self.spec.num_classes;
        Ok(logits
            .data()
            .chunks(c)
            .map(|row| {
                row.iter()
                    .enumerate()
                    .max_by(|a, b| a.1.total_cmp(b.1))
                    .map(|(i, _)| i)
                    .unwrap_or(0)
            })
            .collect())
    }
}

/// Hierarchical feature extraction: per stage, local aggregation then
/// farthest-point downsampling. Returns the input level followed by one
/// (cloud, features) level per stage.
fn encode_levels(
    spec: &NetworkSpec,
    encoder: &[EncoderStage],
    graph: &mut Graph,
    store: &mut ParamStore,
    cloud: &PointCloud,
    mode: Mode,
) -> Result<Vec<(PointCloud, Var)>> {
    let n = cloud.len();
    let feats = input_features(cloud);
    if feats.shape()[1] != spec.input_dim {
        return Err(CoreError::ShapeMismatch(format!(
            "cloud provides {} input channels, network wants {}",
            feats.shape()[1],
            spec.input_dim
        )));
    }
    let last_out = spec.stages.last().unwrap().points_out;
    if n < last_out.max(2) {
        return Err(CoreError::InsufficientPoints(format!(
            "cloud has {n} points, final stage wants {last_out}"
        )));
    }
    let f0 = graph.constant(feats)?;
    let mut levels = vec![(cloud.clone(), f0)];
    let mut current_cloud = cloud.clone();
    let mut current = f0;
    for (i, (stage, layers)) in spec.stages.iter().zip(encoder).enumerate() {
        let n_in = current_cloud.len();
        if n_in <= stage.k_encoder {
            return Err(CoreError::InsufficientPoints(format!(
                "stage {i} has {n_in} points for k={}",
                stage.k_encoder
            )));
        }
        let nbr = knn_graph(&current_cloud, stage.k_encoder, false)?;
        let gathered = graph.gather_feat(current, &nbr)?;
        let relpos = relative_positions(&current_cloud, &nbr)?;
        let relpos = graph.constant(relpos)?;
        let edge_in = graph.concat_last(gathered, relpos)?;
        let h = layers.linear.forward(graph, store, edge_in)?;
        let h = graph.relu(h)?;
        let mut agg = graph.max_over_neighbors(h)?;
        let d_in = graph.value(current).shape()[1];
        if d_in == stage.channels {
            agg = graph.add(agg, current)?;
        }
        if let Some(du) = &layers.du {
            if n_in <= du.options.k {
                return Err(CoreError::InsufficientPoints(format!(
                    "encoder stage {i} cannot supply k={}",
                    du.options.k
                )));
            }
            let du_nbr = knn_graph(&current_cloud, du.options.k, false)?;
            agg = du.forward(graph, store, agg, &du_nbr, mode)?;
        }
        if stage.points_out > n_in {
            return Err(CoreError::InsufficientPoints(format!(
                "stage {i} wants {} of {} points",
                stage.points_out, n_in
            )));
        }
        if stage.points_out < n_in {
            let start = lexicographic_min_index(&current_cloud);
            let rows = farthest_point_sample(&current_cloud, stage.points_out, start)?;
            current_cloud = current_cloud.select(&rows)?;
            current = graph.select_rows(agg, &rows)?;
        } else {
            current = agg;
        }
        levels.push((current_cloud.clone(), current));
    }
    Ok(levels)
}

/// Resolution recovery: upsample, concatenate the skip feature, project,
/// and apply the stage block. Returns full-resolution features and any
/// requested capture.
fn decode_levels(
    spec: &NetworkSpec,
    decoder: &[DecoderStage],
    graph: &mut Graph,
    store: &mut ParamStore,
    levels: &[(PointCloud, Var)],
    mode: Mode,
    capture_stage: Option<usize>,
) -> Result<(Var, Option<StageCapture>)> {
    let s = spec.stages.len();
    let mut current = levels[s].1;
    let mut current_cloud = &levels[s].0;
    let mut capture = None;
    for (j, stage) in decoder.iter().enumerate() {
        let target_level = s - 1 - j;
        let (target_cloud, skip) = &levels[target_level];
        let (nbr, weights) = interp_weights(current_cloud, target_cloud, spec.interp_k)?;
        let up = graph.interp(current, &nbr, &weights)?;
        let cat = graph.concat_last(up, *skip)?;
        let proj = stage.proj.forward(graph, store, cat)?;
        let capturing = capture_stage == Some(j + 1);
        // Pointwise stages only need a stencil when their features are
        // being captured for the smoothness diagnostics.
        let block_nbr = match &stage.block {
            StageBlock::Du(_) => Some(knn_graph(target_cloud, stage.k_used, false)?),
            StageBlock::Fp(_) if capturing => {
                Some(knn_graph(target_cloud, stage.k_used, false)?)
            }
            StageBlock::Fp(_) => None,
        };
        let out = match &stage.block {
            StageBlock::Du(du) => {
                du.forward(graph, store, proj, block_nbr.as_ref().unwrap(), mode)?
            }
            StageBlock::Fp(fp) => fp.forward(graph, store, proj)?,
        };
        if capturing {
            capture = Some(StageCapture {
                stage: j + 1,
                cloud: target_cloud.clone(),
                nbr: block_nbr.expect("stencil built when capturing"),
                before: graph.value(proj).clone(),
                after: graph.value(out).clone(),
            });
        }
        current = out;
        current_cloud = target_cloud;
    }
    Ok((current, capture))
}

/// Neighbor positions relative to their center: the translation-invariant
/// geometric input of the aggregation block.
fn relative_positions(cloud: &PointCloud, nbr: &NeighborIndex) -> Result<Tensor> {
    let n = cloud.len();
    let k = nbr.k();
    let pts = cloud.positions();
    let mut data = vec![0.0; n * k * 3];
    for s in 0..n {
        let c = pts[s];
        for (j, &nb) in nbr.row(s).iter().enumerate() {
            let p = pts[nb];
            let base = (s * k + j) * 3;
            data[base] = p[0] - c[0];
            data[base + 1] = p[1] - c[1];
            data[base + 2] = p[2] - c[2];
        }
    }
    Tensor::from_vec(&[n, k, 3], data)
}

#[cfg(test)]
#[path = "net_tests.rs"]
mod tests;

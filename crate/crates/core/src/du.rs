//! The Diffusion Unit: a residual, edge-aware feature update derived from an
//! explicit discretization of a learnable diffusion equation.
//!
//! One step computes `u_s + varphi( agg_{n in N_s} phi(edge(u, s, n)) )`
//! where `edge` is the neighbor difference `u_n - u_s` (or the raw neighbor
//! feature), `phi` a shared MLP, `varphi` ReLU after batch normalization, and
//! `agg` the neighbor mean (or plain sum in the raw scheme). Each piece can
//! be switched off independently, which yields the standard ablation grid.

use crate::diffcore::{BatchNormLayer, Graph, Mlp, Mode, ParamStore, Var};
use crate::error::{CoreError, Result};
use crate::geom::NeighborIndex;
use crate::rng::Rng;

/// Which edge feature feeds `phi`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EdgeFeature {
    /// u_n - u_s: the gradient surrogate.
    Difference,
    /// u_n: plain neighbor aggregation.
    Neighbor,
}

/// Switch settings of one diffusion unit.
#[derive(Clone, Copy, Debug)]
pub struct DuOptions {
    pub k: usize,
    pub edge_feature: EdgeFeature,
    pub use_phi: bool,
    pub use_varphi: bool,
    /// Mean over neighbors when true; plain summation (the raw discretized
    /// scheme) when false.
    pub average: bool,
    /// Hidden width of phi; defaults to the feature dimension.
    pub phi_hidden: Option<usize>,
    /// Zero-initialize the final layer of phi, making a fresh unit the
    /// exact identity map. Off by default: an exactly-zero block output
    /// cannot recover through the rectifier's zero subgradient.
    pub zero_init: bool,
}

impl Default for DuOptions {
    fn default() -> Self {
        DuOptions {
            k: 16,
            edge_feature: EdgeFeature::Difference,
            use_phi: true,
            use_varphi: true,
            average: true,
            phi_hidden: None,
            zero_init: false,
        }
    }
}

/// One row of the ablation grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DuAblationConfig {
    pub model_id: u8,
    pub k: usize,
    pub edge_feature: EdgeFeature,
    pub use_phi: bool,
    pub use_varphi: bool,
}

/// The eight ablation rows: model 1 is the default unit; 2-4 drop phi and/or
/// varphi; 5-7 vary the neighborhood size over {8, 24, 28}; model 8 swaps the
/// edge difference for the raw neighbor feature.
pub fn du_ablation(model_id: u8) -> Result<DuAblationConfig> {
    let (k, edge_feature, use_phi, use_varphi) = match model_id {
        1 => (16, EdgeFeature::Difference, true, true),
        2 => (16, EdgeFeature::Difference, false, true),
        3 => (16, EdgeFeature::Difference, true, false),
        4 => (16, EdgeFeature::Difference, false, false),
        5 => (8, EdgeFeature::Difference, true, true),
        6 => (24, EdgeFeature::Difference, true, true),
        7 => (28, EdgeFeature::Difference, true, true),
        8 => (16, EdgeFeature::Neighbor, true, true),
        other => {
            return Err(CoreError::InvalidArgument(format!(
                "unknown ablation model id {other} (expected 1..=8)"
            )))
        }
    };
    Ok(DuAblationConfig {
        model_id,
        k,
        edge_feature,
        use_phi,
        use_varphi,
    })
}

impl DuAblationConfig {
    pub fn options(&self) -> DuOptions {
        DuOptions {
            k: self.k,
            edge_feature: self.edge_feature,
            use_phi: self.use_phi,
            use_varphi: self.use_varphi,
            ..DuOptions::default()
        }
    }
}

/// A diffusion unit bound to a feature dimension, holding the parameters of
/// phi (when enabled) and varphi (when enabled).
#[derive(Clone, Debug)]
pub struct DuLayer {
    pub dim: usize,
    pub options: DuOptions,
    pub phi: Option<Mlp>,
    pub varphi: Option<BatchNormLayer>,
}

impl DuLayer {
    /// Register a unit's parameters under `name`.
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        dim: usize,
        options: DuOptions,
        rng: &mut Rng,
    ) -> Result<Self> {
        if options.k == 0 {
            return Err(CoreError::InvalidArgument(
                "diffusion unit needs at least one neighbor".into(),
            ));
        }
        let phi = if options.use_phi {
            let hidden = options.phi_hidden.unwrap_or(dim);
            Some(Mlp::new(
                store,
                &format!("{name}.phi"),
                &[dim, hidden, dim],
                options.zero_init,
                rng,
            )?)
        } else {
            None
        };
        let varphi = if options.use_varphi {
            Some(BatchNormLayer::new(store, &format!("{name}.varphi"), dim)?)
        } else {
            None
        };
        Ok(DuLayer {
            dim,
            options,
            phi,
            varphi,
        })
    }

    /// A unit whose phi is a fixed single linear map (no bias); used by the
    /// classical-limit and edge-behavior diagnostics.
    pub fn with_linear_phi(
        store: &mut ParamStore,
        name: &str,
        dim: usize,
        weight: &[f64],
        k: usize,
        average: bool,
    ) -> Result<Self> {
        if weight.len() != dim * dim {
            return Err(CoreError::ShapeMismatch(format!(
                "linear phi weight wants {}x{} entries",
                dim, dim
            )));
        }
        if k == 0 {
            return Err(CoreError::InvalidArgument(
                "diffusion unit needs at least one neighbor".into(),
            ));
        }
        let mut rng = Rng::new(0);
        // A one-layer MLP is a plain linear map; the bias starts (and stays)
        // zero, the weight is set explicitly.
        let single = Mlp::new(store, &format!("{name}.phi"), &[dim, dim], false, &mut rng)?;
        store
            .get_mut(single.layers[0].w)
            .data_mut()
            .copy_from_slice(weight);
        Ok(DuLayer {
            dim,
            options: DuOptions {
                k,
                edge_feature: EdgeFeature::Difference,
                use_phi: true,
                use_varphi: false,
                average,
                phi_hidden: None,
                zero_init: false,
            },
            phi: Some(single),
            varphi: None,
        })
    }

    pub fn param_count(&self) -> usize {
        self.phi.as_ref().map_or(0, Mlp::param_count)
            + self.varphi.as_ref().map_or(0, BatchNormLayer::param_count)
    }

    /// One diffusion step. `u` must be an n x dim feature tensor and `nbr`
    /// a stencil with exactly `options.k` neighbors per point.
    pub fn forward(
        &self,
        graph: &mut Graph,
        store: &mut ParamStore,
        u: Var,
        nbr: &NeighborIndex,
        mode: Mode,
    ) -> Result<Var> {
        let shape = graph.value(u).shape().to_vec();
        if shape.len() != 2 || shape[1] != self.dim {
            return Err(CoreError::ShapeMismatch(format!(
                "diffusion unit expects n x {} features, got {:?}",
                self.dim, shape
            )));
        }
        if nbr.k() != self.options.k {
            return Err(CoreError::ShapeMismatch(format!(
                "neighborhood size {} does not match layer k={}",
                nbr.k(),
                self.options.k
            )));
        }
        graph.value(u).check_finite("diffusion unit input")?;
        let edge = match self.options.edge_feature {
            EdgeFeature::Difference => graph.gather_diff(u, nbr)?,
            EdgeFeature::Neighbor => graph.gather_feat(u, nbr)?,
        };
        let transformed = match &self.phi {
            Some(phi) => phi.forward(graph, store, edge)?,
            None => edge,
        };
        let aggregated = if self.options.average {
            graph.mean_over_neighbors(transformed)?
        } else {
            graph.sum_over_neighbors(transformed)?
        };
        let rectified = match &self.varphi {
            Some(bn) => {
                let normed = bn.forward(graph, store, aggregated, mode)?;
                graph.relu(normed)?
            }
            None => aggregated,
        };
        graph.add(u, rectified)
    }
}

/// Iterate the explicit scheme. One layer shared across iterations, or one
/// layer per iteration.
pub fn du_stack(
    graph: &mut Graph,
    store: &mut ParamStore,
    layers: &[&DuLayer],
    u: Var,
    nbr: &NeighborIndex,
    iterations: usize,
    mode: Mode,
) -> Result<Var> {
    if iterations == 0 {
        return Err(CoreError::InvalidArgument(
            "diffusion stack needs at least one iteration".into(),
        ));
    }
    if layers.is_empty() {
        return Err(CoreError::InvalidArgument(
            "diffusion stack needs at least one layer".into(),
        ));
    }
    if layers.len() != 1 && layers.len() != iterations {
        return Err(CoreError::InvalidArgument(format!(
            "diffusion stack wants 1 shared layer or {} distinct layers, got {}",
            iterations,
            layers.len()
        )));
    }
    let mut state = u;
    for step in 0..iterations {
        let layer = if layers.len() == 1 { layers[0] } else { layers[step] };
        state = layer.forward(graph, store, state, nbr, mode)?;
    }
    Ok(state)
}

/// A 1-D chain stencil over `n` samples: interior points see {i-1, i+1},
/// endpoints see themselves plus their single inner neighbor (the zero-flux
/// convention: a self-edge contributes nothing to a difference scheme).
pub fn chain_stencil(n: usize) -> Result<NeighborIndex> {
    if n < 3 {
        return Err(CoreError::InsufficientPoints(
            "chain stencil needs at least 3 samples".into(),
        ));
    }
    let mut indices = Vec::with_capacity(n * 2);
    let mut distances = Vec::with_capacity(n * 2);
    for i in 0..n {
        if i == 0 {
            indices.extend_from_slice(&[0, 1]);
            distances.extend_from_slice(&[0.0, 1.0]);
        } else if i == n - 1 {
            indices.extend_from_slice(&[n - 1, n - 2]);
            distances.extend_from_slice(&[0.0, 1.0]);
        } else {
            indices.extend_from_slice(&[i - 1, i + 1]);
            distances.extend_from_slice(&[1.0, 1.0]);
        }
    }
    NeighborIndex::from_rows(n, 2, indices, distances)
}

//! Trainable building blocks: linear layers, shared MLPs, and batch
//! normalization, with their parameters held in a [`ParamStore`].

use crate::diffcore::graph::{BnState, Graph, Mode, Var};
use crate::diffcore::params::{ParamId, ParamStore};
use crate::diffcore::tensor::Tensor;
use crate::error::Result;
use crate::rng::Rng;

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Clone, Copy, Debug)]
pub enum LinearInit {
    /// Symmetric uniform with fan-in scaling.
    FanIn,
    /// All-zero weights and bias; used where a block must start as the
    /// identity map.
    Zero,
}

#[derive(Clone, Debug)]
pub struct LinearLayer {
    pub w: ParamId,
    pub b: ParamId,
    pub din: usize,
    pub dout: usize,
}

impl LinearLayer {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        din: usize,
        dout: usize,
        init: LinearInit,
        rng: &mut Rng,
    ) -> Result<Self> {
        let w = match init {
            LinearInit::FanIn => Tensor::uniform_fan_in(&[din, dout], din, rng),
            LinearInit::Zero => Tensor::zeros(&[din, dout]),
        };
        let b = Tensor::zeros(&[dout]);
        let w = store.register(&format!("{name}.weight"), w, true)?;
        let b = store.register(&format!("{name}.bias"), b, true)?;
        Ok(LinearLayer { w, b, din, dout })
    }

    pub fn forward(&self, graph: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let w = graph.param(store, self.w)?;
        let b = graph.param(store, self.b)?;
        graph.linear(x, w, Some(b))
    }

    pub fn param_count(&self) -> usize {
        self.din * self.dout + self.dout
    }
}

/// Shared pointwise MLP: linear layers with ReLU between them (none after
/// the last). A single layer is a plain linear map.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub layers: Vec<LinearLayer>,
}

impl Mlp {
    /// `dims` lists the layer widths end to end, e.g. `[d, h, d]` for a
    /// two-layer map. With `zero_last` the final layer starts at zero.
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        dims: &[usize],
        zero_last: bool,
        rng: &mut Rng,
    ) -> Result<Self> {
        assert!(dims.len() >= 2, "an MLP needs at least one layer");
        let mut layers = Vec::with_capacity(dims.len() - 1);
        for i in 0..dims.len() - 1 {
            let last = i == dims.len() - 2;
            let init = if last && zero_last {
                LinearInit::Zero
            } else {
                LinearInit::FanIn
            };
            layers.push(LinearLayer::new(
                store,
                &format!("{prefix}.{i}"),
                dims[i],
                dims[i + 1],
                init,
                rng,
            )?);
        }
        Ok(Mlp { layers })
    }

    pub fn forward(&self, graph: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(graph, store, h)?;
            if i + 1 < self.layers.len() {
                h = graph.relu(h)?;
            }
        }
        Ok(h)
    }

    /// Graph-free evaluation of the map at a single point. Used where the
    /// MLP is probed as a plain function (derivative estimation).
    pub fn eval_point(&self, store: &ParamStore, x: &[f64]) -> Vec<f64> {
        let mut h = x.to_vec();
        for (i, layer) in self.layers.iter().enumerate() {
            let w = store.get(layer.w).data();
            let b = store.get(layer.b).data();
            let mut out = b.to_vec();
            for (j, &xv) in h.iter().enumerate() {
                for (o, wv) in out.iter_mut().zip(&w[j * layer.dout..(j + 1) * layer.dout]) {
                    *o += xv * wv;
                }
            }
            if i + 1 < self.layers.len() {
                for o in out.iter_mut() {
                    *o = o.max(0.0);
                }
            }
            h = out;
        }
        h
    }

    pub fn input_dim(&self) -> usize {
        self.layers.first().map(|l| l.din).unwrap_or(0)
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map(|l| l.dout).unwrap_or(0)
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(LinearLayer::param_count).sum()
    }
}

/// Batch normalization over the point axis with persistent running
/// statistics.
#[derive(Clone, Debug)]
pub struct BatchNormLayer {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub state: BnState,
    pub dim: usize,
}

impl BatchNormLayer {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Result<Self> {
        let gamma = store.register(&format!("{name}.gamma"), Tensor::full(&[dim], 1.0), true)?;
        let beta = store.register(&format!("{name}.beta"), Tensor::zeros(&[dim]), true)?;
        let running_mean =
            store.register(&format!("{name}.running_mean"), Tensor::zeros(&[dim]), false)?;
        let running_var =
            store.register(&format!("{name}.running_var"), Tensor::full(&[dim], 1.0), false)?;
        Ok(BatchNormLayer {
            gamma,
            beta,
            state: BnState {
                running_mean,
                running_var,
                momentum: BN_MOMENTUM,
                eps: BN_EPS,
            },
            dim,
        })
    }

    pub fn forward(
        &self,
        graph: &mut Graph,
        store: &mut ParamStore,
        x: Var,
        mode: Mode,
    ) -> Result<Var> {
        let gamma = graph.param(store, self.gamma)?;
        let beta = graph.param(store, self.beta)?;
        graph.batch_norm(x, gamma, beta, store, self.state, mode)
    }

    /// gamma and beta; running statistics are state, not parameters.
    pub fn param_count(&self) -> usize {
        2 * self.dim
    }
}

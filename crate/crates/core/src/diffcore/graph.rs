//! Reverse-mode differentiation over an eagerly evaluated operation tape.
//!
//! Each method records one node holding the forward value and enough context
//! for its backward rule. `backward` walks the tape in reverse, accumulating
//! gradients additively into shared inputs. Every forward and backward tensor
//! is checked finite; the first non-finite value aborts with the name of the
//! operation that produced it.
//!
//! Reductions whose operand order is not fixed by the data layout (neighbor
//! averaging, batch statistics) sum their operands in a canonical sorted
//! order, so outputs are bit-identical under point permutations and
//! neighbor-list shuffles.

use crate::diffcore::params::{ParamId, ParamStore};
use crate::diffcore::tensor::Tensor;
use crate::error::{CoreError, Result};
use crate::geom::NeighborIndex;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Handle to a node in the graph.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var {
    id: usize,
}

/// Batch-normalization running state handles plus hyperparameters.
#[derive(Clone, Copy, Debug)]
pub struct BnState {
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub momentum: f64,
    pub eps: f64,
}

enum BackOp {
    Leaf {
        param: Option<usize>,
    },
    Relu {
        x: usize,
    },
    Add {
        a: usize,
        b: usize,
    },
    Scale {
        x: usize,
        c: f64,
    },
    Linear {
        x: usize,
        w: usize,
        b: Option<usize>,
    },
    BatchNorm {
        x: usize,
        gamma: usize,
        beta: usize,
        xhat: Tensor,
        inv_std: Vec<f64>,
        batch_stats: bool,
    },
    GatherDiff {
        u: usize,
        indices: Vec<usize>,
        k: usize,
    },
    GatherFeat {
        u: usize,
        indices: Vec<usize>,
        k: usize,
    },
    MeanNbr {
        x: usize,
    },
    SumNbr {
        x: usize,
    },
    MaxNbr {
        x: usize,
        argmax: Vec<usize>,
    },
    ConcatLast {
        a: usize,
        b: usize,
    },
    SelectRows {
        x: usize,
        rows: Vec<usize>,
    },
    Interp {
        coarse: usize,
        indices: Vec<usize>,
        weights: Vec<f64>,
        k: usize,
    },
    CrossEntropy {
        logits: usize,
        probs: Vec<f64>,
        labels: Vec<usize>,
        alpha: f64,
    },
    SumAll {
        x: usize,
    },
    WeightedSum {
        x: usize,
        weights: Vec<f64>,
    },
}

struct Node {
    value: Tensor,
    needs_grad: bool,
    label: &'static str,
    op: BackOp,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Sum in a canonical (sorted) order: bit-identical for any permutation of
/// the operands.
fn canonical_sum(values: &mut [f64]) -> f64 {
    values.sort_unstable_by(f64::total_cmp);
    values.iter().sum()
}

impl Graph {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.id].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, needs_grad: bool, label: &'static str, op: BackOp) -> Result<Var> {
        value.check_finite(label)?;
        let id = self.nodes.len();
        self.nodes.push(Node {
            value,
            needs_grad,
            label,
            op,
        });
        Ok(Var { id })
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.id].needs_grad
    }

    /// Non-differentiable input.
    pub fn constant(&mut self, value: Tensor) -> Result<Var> {
        self.push(value, false, "constant", BackOp::Leaf { param: None })
    }

    /// Differentiable input not bound to a parameter slot.
    pub fn leaf(&mut self, value: Tensor) -> Result<Var> {
        self.push(value, true, "leaf", BackOp::Leaf { param: None })
    }

    /// Bind a parameter: its gradient is retrievable by slot after backward.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Result<Var> {
        let trainable = store.is_trainable(id);
        self.push(
            store.get(id).clone(),
            trainable,
            "param",
            BackOp::Leaf {
                param: trainable.then_some(id.0),
            },
        )
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x);
        let data = v.data().iter().map(|&a| a.max(0.0)).collect();
        let out = Tensor::from_vec(v.shape(), data)?;
        let needs = self.needs(x);
        self.push(out, needs, "relu", BackOp::Relu { x: x.id })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(CoreError::ShapeMismatch(format!(
                "add {:?} vs {:?}",
                va.shape(),
                vb.shape()
            )));
        }
        let data = va
            .data()
            .iter()
            .zip(vb.data())
            .map(|(x, y)| x + y)
            .collect();
        let out = Tensor::from_vec(va.shape(), data)?;
        let needs = self.needs(a) || self.needs(b);
        self.push(out, needs, "add", BackOp::Add { a: a.id, b: b.id })
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        let v = self.value(x);
        let data = v.data().iter().map(|&a| a * c).collect();
        let out = Tensor::from_vec(v.shape(), data)?;
        let needs = self.needs(x);
        self.push(out, needs, "scale", BackOp::Scale { x: x.id, c })
    }

    /// y = x W + b over the trailing axis; leading axes are flattened to rows.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let vx = self.value(x);
        let vw = self.value(w);
        if vw.shape().len() != 2 {
            return Err(CoreError::ShapeMismatch(format!(
                "linear weight must be rank 2, got {:?}",
                vw.shape()
            )));
        }
        let (din, dout) = (vw.shape()[0], vw.shape()[1]);
        let xs = vx.shape();
        if xs.is_empty() || xs[xs.len() - 1] != din {
            return Err(CoreError::ShapeMismatch(format!(
                "linear input {:?} vs weight {:?}",
                xs,
                vw.shape()
            )));
        }
        if let Some(bv) = b {
            let vb = self.value(bv);
            if vb.shape() != [dout] {
                return Err(CoreError::ShapeMismatch(format!(
                    "linear bias {:?} vs dout {}",
                    vb.shape(),
                    dout
                )));
            }
        }
        let rows = vx.numel() / din;
        let mut out = vec![0.0; rows * dout];
        {
            let xd = vx.data();
            let wd = vw.data();
            // Row-major ikj loop keeps the weight row contiguous.
            for r in 0..rows {
                let xrow = &xd[r * din..(r + 1) * din];
                let orow = &mut out[r * dout..(r + 1) * dout];
                for (j, &xv) in xrow.iter().enumerate() {
                    if xv == 0.0 {
                        continue;
                    }
                    let wrow = &wd[j * dout..(j + 1) * dout];
                    for (o, wv) in orow.iter_mut().zip(wrow) {
                        *o += xv * wv;
                    }
                }
            }
            if let Some(bv) = b {
                let bd = self.value(bv).data().to_vec();
                for r in 0..rows {
                    let orow = &mut out[r * dout..(r + 1) * dout];
                    for (o, bvv) in orow.iter_mut().zip(&bd) {
                        *o += bvv;
                    }
                }
            }
        }
        let mut shape = xs.to_vec();
        *shape.last_mut().unwrap() = dout;
        let value = Tensor::from_vec(&shape, out)?;
        let needs = self.needs(x) || self.needs(w) || b.map(|bv| self.needs(bv)).unwrap_or(false);
        self.push(
            value,
            needs,
            "linear",
            BackOp::Linear {
                x: x.id,
                w: w.id,
                b: b.map(|bv| bv.id),
            },
        )
    }

    /// Per-channel normalization over the point axis of an n x d input.
    /// Train mode normalizes by batch statistics (computed with canonical
    /// sums) and updates running state; eval mode uses the stored state.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        store: &mut ParamStore,
        state: BnState,
        mode: Mode,
    ) -> Result<Var> {
        let vx = self.value(x);
        if vx.shape().len() != 2 {
            return Err(CoreError::ShapeMismatch(format!(
                "batch_norm input must be rank 2, got {:?}",
                vx.shape()
            )));
        }
        let (n, d) = (vx.shape()[0], vx.shape()[1]);
        if d == 0 {
            return Err(CoreError::InvalidArgument(
                "batch_norm with zero channels".into(),
            ));
        }
        if n == 0 {
            return Err(CoreError::InvalidArgument(
                "batch_norm over an empty batch".into(),
            ));
        }
        for (name, v) in [("gamma", gamma), ("beta", beta)] {
            if self.value(v).shape() != [d] {
                return Err(CoreError::ShapeMismatch(format!(
                    "batch_norm {name} must have shape [{d}]"
                )));
            }
        }
        let xd = self.value(x).data().to_vec();
        let (mean, var) = match mode {
            Mode::Train => {
                let mut mean = vec![0.0; d];
                let mut var = vec![0.0; d];
                let mut col = vec![0.0; n];
                for c in 0..d {
                    for i in 0..n {
                        col[i] = xd[i * d + c];
                    }
                    let m = canonical_sum(&mut col) / n as f64;
                    for i in 0..n {
                        let dev = xd[i * d + c] - m;
                        col[i] = dev * dev;
                    }
                    let v = canonical_sum(&mut col) / n as f64;
                    mean[c] = m;
                    var[c] = v;
                }
                // running <- (1 - momentum) * running + momentum * batch
                let mom = state.momentum;
                {
                    let rm = store.get_mut(state.running_mean).data_mut();
                    for (r, &m) in rm.iter_mut().zip(&mean) {
                        *r = (1.0 - mom) * *r + mom * m;
                    }
                }
                {
                    let rv = store.get_mut(state.running_var).data_mut();
                    for (r, &v) in rv.iter_mut().zip(&var) {
                        *r = (1.0 - mom) * *r + mom * v;
                    }
                }
                (mean, var)
            }
            Mode::Eval => (
                store.get(state.running_mean).data().to_vec(),
                store.get(state.running_var).data().to_vec(),
            ),
        };
        let inv_std: Vec<f64> = var.iter().map(|&v| 1.0 / (v + state.eps).sqrt()).collect();
        let gd = self.value(gamma).data().to_vec();
        let bd = self.value(beta).data().to_vec();
        let mut xhat = vec![0.0; n * d];
        let mut out = vec![0.0; n * d];
        for i in 0..n {
            for c in 0..d {
                let h = (xd[i * d + c] - mean[c]) * inv_std[c];
                xhat[i * d + c] = h;
                out[i * d + c] = gd[c] * h + bd[c];
            }
        }
        let value = Tensor::from_vec(&[n, d], out)?;
        let needs = self.needs(x) || self.needs(gamma) || self.needs(beta);
        self.push(
            value,
            needs,
            "batch_norm",
            BackOp::BatchNorm {
                x: x.id,
                gamma: gamma.id,
                beta: beta.id,
                xhat: Tensor::from_vec(&[n, d], xhat)?,
                inv_std,
                batch_stats: mode == Mode::Train,
            },
        )
    }

    fn gather_common(&self, u: Var, nbr: &NeighborIndex) -> Result<(usize, usize, usize)> {
        let vu = self.value(u);
        if vu.shape().len() != 2 {
            return Err(CoreError::ShapeMismatch(format!(
                "gather input must be rank 2, got {:?}",
                vu.shape()
            )));
        }
        let (n, d) = (vu.shape()[0], vu.shape()[1]);
        if nbr.len() != n {
            return Err(CoreError::ShapeMismatch(format!(
                "neighbor index covers {} points, features have {}",
                nbr.len(),
                n
            )));
        }
        nbr.check_against(n)?;
        Ok((n, nbr.k(), d))
    }

    /// Edge features as element-wise differences: out[s][j] = u[nbr[s][j]] - u[s].
    pub fn gather_diff(&mut self, u: Var, nbr: &NeighborIndex) -> Result<Var> {
        let (n, k, d) = self.gather_common(u, nbr)?;
        let ud = self.value(u).data();
        let mut out = vec![0.0; n * k * d];
        for s in 0..n {
            let center = &ud[s * d..(s + 1) * d];
            for (j, &nb) in nbr.row(s).iter().enumerate() {
                let nf = &ud[nb * d..(nb + 1) * d];
                let orow = &mut out[(s * k + j) * d..(s * k + j + 1) * d];
                for ((o, &a), &c) in orow.iter_mut().zip(nf).zip(center) {
                    *o = a - c;
                }
            }
        }
        let value = Tensor::from_vec(&[n, k, d], out)?;
        let needs = self.needs(u);
        self.push(
            value,
            needs,
            "gather_diff",
            BackOp::GatherDiff {
                u: u.id,
                indices: nbr.indices().to_vec(),
                k,
            },
        )
    }

    /// Neighbor features without the center subtraction: out[s][j] = u[nbr[s][j]].
    pub fn gather_feat(&mut self, u: Var, nbr: &NeighborIndex) -> Result<Var> {
        let (n, k, d) = self.gather_common(u, nbr)?;
        let ud = self.value(u).data();
        let mut out = vec![0.0; n * k * d];
        for s in 0..n {
            for (j, &nb) in nbr.row(s).iter().enumerate() {
                out[(s * k + j) * d..(s * k + j + 1) * d]
                    .copy_from_slice(&ud[nb * d..(nb + 1) * d]);
            }
        }
        let value = Tensor::from_vec(&[n, k, d], out)?;
        let needs = self.needs(u);
        self.push(
            value,
            needs,
            "gather_feat",
            BackOp::GatherFeat {
                u: u.id,
                indices: nbr.indices().to_vec(),
                k,
            },
        )
    }

    fn nbr_reduce_shape(&self, x: Var) -> Result<(usize, usize, usize)> {
        let v = self.value(x);
        if v.shape().len() != 3 {
            return Err(CoreError::ShapeMismatch(format!(
                "neighbor reduction input must be rank 3, got {:?}",
                v.shape()
            )));
        }
        let (n, k, d) = (v.shape()[0], v.shape()[1], v.shape()[2]);
        if k == 0 {
            return Err(CoreError::InvalidArgument(
                "neighbor reduction over zero neighbors".into(),
            ));
        }
        Ok((n, k, d))
    }

    fn nbr_sum(&mut self, x: Var, divide: bool) -> Result<Var> {
        let (n, k, d) = self.nbr_reduce_shape(x)?;
        let xd = self.value(x).data();
        let mut out = vec![0.0; n * d];
        let mut buf = vec![0.0; k];
        let scale = if divide { 1.0 / k as f64 } else { 1.0 };
        for s in 0..n {
            for c in 0..d {
                for j in 0..k {
                    buf[j] = xd[(s * k + j) * d + c];
                }
                out[s * d + c] = canonical_sum(&mut buf) * scale;
            }
        }
        let value = Tensor::from_vec(&[n, d], out)?;
        let needs = self.needs(x);
        if divide {
            self.push(value, needs, "mean_over_neighbors", BackOp::MeanNbr { x: x.id })
        } else {
            self.push(value, needs, "sum_over_neighbors", BackOp::SumNbr { x: x.id })
        }
    }

    /// Mean over the neighbor axis of an n x k x d tensor.
    pub fn mean_over_neighbors(&mut self, x: Var) -> Result<Var> {
        self.nbr_sum(x, true)
    }

    /// Plain summation over the neighbor axis (the raw discretization form).
    pub fn sum_over_neighbors(&mut self, x: Var) -> Result<Var> {
        self.nbr_sum(x, false)
    }

    /// Channel-wise max over the neighbor axis.
    pub fn max_over_neighbors(&mut self, x: Var) -> Result<Var> {
        let (n, k, d) = self.nbr_reduce_shape(x)?;
        let xd = self.value(x).data();
        let mut out = vec![0.0; n * d];
        let mut argmax = vec![0usize; n * d];
        for s in 0..n {
            for c in 0..d {
                let mut best = f64::NEG_INFINITY;
                let mut bj = 0usize;
                for j in 0..k {
                    let v = xd[(s * k + j) * d + c];
                    if v > best {
                        best = v;
                        bj = j;
                    }
                }
                out[s * d + c] = best;
                argmax[s * d + c] = bj;
            }
        }
        let value = Tensor::from_vec(&[n, d], out)?;
        let needs = self.needs(x);
        self.push(
            value,
            needs,
            "max_over_neighbors",
            BackOp::MaxNbr { x: x.id, argmax },
        )
    }

    /// Concatenate along the trailing axis; leading axes must agree.
    pub fn concat_last(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        let (sa, sb) = (va.shape(), vb.shape());
        if sa.len() != sb.len() || sa.is_empty() || sa[..sa.len() - 1] != sb[..sb.len() - 1] {
            return Err(CoreError::ShapeMismatch(format!(
                "concat_last {:?} vs {:?}",
                sa, sb
            )));
        }
        let (da, db) = (sa[sa.len() - 1], sb[sb.len() - 1]);
        let rows = va.numel() / da.max(1);
        let mut out = Vec::with_capacity(rows * (da + db));
        for r in 0..rows {
            out.extend_from_slice(&va.data()[r * da..(r + 1) * da]);
            out.extend_from_slice(&vb.data()[r * db..(r + 1) * db]);
        }
        let mut shape = sa.to_vec();
        *shape.last_mut().unwrap() = da + db;
        let value = Tensor::from_vec(&shape, out)?;
        let needs = self.needs(a) || self.needs(b);
        self.push(
            value,
            needs,
            "concat_last",
            BackOp::ConcatLast { a: a.id, b: b.id },
        )
    }

    /// Row subset of a rank-2 tensor (downsampling by index list).
    pub fn select_rows(&mut self, x: Var, rows: &[usize]) -> Result<Var> {
        let v = self.value(x);
        if v.shape().len() != 2 {
            return Err(CoreError::ShapeMismatch(format!(
                "select_rows input must be rank 2, got {:?}",
                v.shape()
            )));
        }
        let (n, d) = (v.shape()[0], v.shape()[1]);
        if let Some(&bad) = rows.iter().find(|&&r| r >= n) {
            return Err(CoreError::IndexOutOfRange(format!(
                "select_rows {} of {}",
                bad, n
            )));
        }
        let mut out = Vec::with_capacity(rows.len() * d);
        for &r in rows {
            out.extend_from_slice(&v.data()[r * d..(r + 1) * d]);
        }
        let value = Tensor::from_vec(&[rows.len(), d], out)?;
        let needs = self.needs(x);
        self.push(
            value,
            needs,
            "select_rows",
            BackOp::SelectRows {
                x: x.id,
                rows: rows.to_vec(),
            },
        )
    }

    /// Inverse-distance interpolation from a coarse feature set to a fine
    /// point set, with precomputed stencil and weights.
    pub fn interp(&mut self, coarse: Var, nbr: &NeighborIndex, weights: &[f64]) -> Result<Var> {
        let v = self.value(coarse);
        if v.shape().len() != 2 {
            return Err(CoreError::ShapeMismatch(format!(
                "interp input must be rank 2, got {:?}",
                v.shape()
            )));
        }
        let (m, d) = (v.shape()[0], v.shape()[1]);
        nbr.check_against(m)?;
        let (nf, k) = (nbr.len(), nbr.k());
        if weights.len() != nf * k {
            return Err(CoreError::ShapeMismatch(format!(
                "interp weights: expected {} entries, got {}",
                nf * k,
                weights.len()
            )));
        }
        let cd = v.data();
        let mut out = vec![0.0; nf * d];
        for i in 0..nf {
            for (j, &cidx) in nbr.row(i).iter().enumerate() {
                let w = weights[i * k + j];
                let src = &cd[cidx * d..(cidx + 1) * d];
                let dst = &mut out[i * d..(i + 1) * d];
                for (o, &s) in dst.iter_mut().zip(src) {
                    *o += w * s;
                }
            }
        }
        let value = Tensor::from_vec(&[nf, d], out)?;
        let needs = self.needs(coarse);
        self.push(
            value,
            needs,
            "interp",
            BackOp::Interp {
                coarse: coarse.id,
                indices: nbr.indices().to_vec(),
                weights: weights.to_vec(),
                k,
            },
        )
    }

    /// Mean label-smoothed cross entropy over points, stabilized by
    /// max-subtraction. Returns a scalar.
    pub fn cross_entropy_label_smoothing(
        &mut self,
        logits: Var,
        labels: &[usize],
        alpha: f64,
    ) -> Result<Var> {
        let v = self.value(logits);
        if v.shape().len() != 2 {
            return Err(CoreError::ShapeMismatch(format!(
                "cross entropy logits must be rank 2, got {:?}",
                v.shape()
            )));
        }
        let (n, c) = (v.shape()[0], v.shape()[1]);
        if labels.len() != n {
            return Err(CoreError::ShapeMismatch(format!(
                "cross entropy: {} labels for {} points",
                labels.len(),
                n
            )));
        }
        if !(0.0..1.0).contains(&alpha) {
            return Err(CoreError::InvalidArgument(format!(
                "label smoothing must lie in [0, 1), got {alpha}"
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
            return Err(CoreError::IndexOutOfRange(format!(
                "label {} out of {} classes",
                bad, c
            )));
        }
        let zd = v.data();
        let mut probs = vec![0.0; n * c];
        let mut total = 0.0;
        for i in 0..n {
            let row = &zd[i * c..(i + 1) * c];
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut denom = 0.0;
            for &z in row {
                denom += (z - m).exp();
            }
            let lse = m + denom.ln();
            for (j, &z) in row.iter().enumerate() {
                probs[i * c + j] = (z - m).exp() / denom;
            }
            // loss_i = lse - sum_c q_c z_c with q = (1-a) onehot + a/C
            let mut qz = 0.0;
            for (j, &z) in row.iter().enumerate() {
                let q = if j == labels[i] { 1.0 - alpha } else { 0.0 } + alpha / c as f64;
                qz += q * z;
            }
            total += lse - qz;
        }
        let value = Tensor::scalar(total / n as f64);
        let needs = self.needs(logits);
        self.push(
            value,
            needs,
            "cross_entropy",
            BackOp::CrossEntropy {
                logits: logits.id,
                probs,
                labels: labels.to_vec(),
                alpha,
            },
        )
    }

    /// Scalar sum of all elements.
    pub fn sum_all(&mut self, x: Var) -> Result<Var> {
        let total: f64 = self.value(x).data().iter().sum();
        let needs = self.needs(x);
        self.push(Tensor::scalar(total), needs, "sum_all", BackOp::SumAll { x: x.id })
    }

    /// Scalar dot product with fixed weights; the usual test probe for
    /// finite-difference checks.
    pub fn weighted_sum(&mut self, x: Var, weights: &[f64]) -> Result<Var> {
        let v = self.value(x);
        if v.numel() != weights.len() {
            return Err(CoreError::ShapeMismatch(format!(
                "weighted_sum: {} weights for {} elements",
                weights.len(),
                v.numel()
            )));
        }
        let total: f64 = v.data().iter().zip(weights).map(|(a, w)| a * w).sum();
        let needs = self.needs(x);
        self.push(
            Tensor::scalar(total),
            needs,
            "weighted_sum",
            BackOp::WeightedSum {
                x: x.id,
                weights: weights.to_vec(),
            },
        )
    }

    /// Reverse pass from a scalar loss. Returns per-node gradients; parameter
    /// gradients accumulate across all bindings of the same slot.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).numel() != 1 {
            return Err(CoreError::ShapeMismatch(
                "backward from a non-scalar loss".into(),
            ));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.id] = Some(Tensor::from_vec(
            self.nodes[loss.id].value.shape(),
            vec![1.0],
        )?);
        for id in (0..self.nodes.len()).rev() {
            if grads[id].is_none() || !self.nodes[id].needs_grad {
                continue;
            }
            let g = grads[id].take().unwrap();
            self.backprop_node(id, &g, &mut grads)?;
            grads[id] = Some(g);
        }
        let mut param_nodes = Vec::new();
        for (id, node) in self.nodes.iter().enumerate() {
            if let BackOp::Leaf { param: Some(slot) } = node.op {
                param_nodes.push((slot, id));
            }
        }
        Ok(Gradients { grads, param_nodes })
    }

    fn accumulate(
        &self,
        grads: &mut [Option<Tensor>],
        target: usize,
        delta: Tensor,
    ) -> Result<()> {
        if !self.nodes[target].needs_grad {
            return Ok(());
        }
        delta.check_finite(self.nodes[target].label)?;
        match &mut grads[target] {
            Some(existing) => existing.add_assign(&delta)?,
            slot @ None => *slot = Some(delta),
        }
        Ok(())
    }

    fn backprop_node(
        &self,
        id: usize,
        g: &Tensor,
        grads: &mut [Option<Tensor>],
    ) -> Result<()> {
        match &self.nodes[id].op {
            BackOp::Leaf { .. } => Ok(()),
            BackOp::Relu { x } => {
                let xv = &self.nodes[*x].value;
                let data = xv
                    .data()
                    .iter()
                    .zip(g.data())
                    .map(|(&a, &gg)| if a > 0.0 { gg } else { 0.0 })
                    .collect();
                self.accumulate(grads, *x, Tensor::from_vec(xv.shape(), data)?)
            }
            BackOp::Add { a, b } => {
                self.accumulate(grads, *a, g.clone())?;
                self.accumulate(grads, *b, g.clone())
            }
            BackOp::Scale { x, c } => {
                let data = g.data().iter().map(|&v| v * c).collect();
                let xv = &self.nodes[*x].value;
                self.accumulate(grads, *x, Tensor::from_vec(xv.shape(), data)?)
            }
            BackOp::Linear { x, w, b } => {
                let xv = &self.nodes[*x].value;
                let wv = &self.nodes[*w].value;
                let (din, dout) = (wv.shape()[0], wv.shape()[1]);
                let rows = xv.numel() / din;
                let gd = g.data();
                if self.nodes[*x].needs_grad {
                    let mut dx = vec![0.0; rows * din];
                    let wd = wv.data();
                    for r in 0..rows {
                        let grow = &gd[r * dout..(r + 1) * dout];
                        let xrow = &mut dx[r * din..(r + 1) * din];
                        for (j, xo) in xrow.iter_mut().enumerate() {
                            let wrow = &wd[j * dout..(j + 1) * dout];
                            let mut acc = 0.0;
                            for (wv2, gg) in wrow.iter().zip(grow) {
                                acc += wv2 * gg;
                            }
                            *xo = acc;
                        }
                    }
                    self.accumulate(grads, *x, Tensor::from_vec(xv.shape(), dx)?)?;
                }
                if self.nodes[*w].needs_grad {
                    let mut dw = vec![0.0; din * dout];
                    let xd = xv.data();
                    for r in 0..rows {
                        let xrow = &xd[r * din..(r + 1) * din];
                        let grow = &gd[r * dout..(r + 1) * dout];
                        for (j, &xvv) in xrow.iter().enumerate() {
                            if xvv == 0.0 {
                                continue;
                            }
                            let wrow = &mut dw[j * dout..(j + 1) * dout];
                            for (o, gg) in wrow.iter_mut().zip(grow) {
                                *o += xvv * gg;
                            }
                        }
                    }
                    self.accumulate(grads, *w, Tensor::from_vec(&[din, dout], dw)?)?;
                }
                if let Some(bid) = b {
                    if self.nodes[*bid].needs_grad {
                        let mut db = vec![0.0; dout];
                        for r in 0..rows {
                            for (o, gg) in db.iter_mut().zip(&gd[r * dout..(r + 1) * dout]) {
                                *o += gg;
                            }
                        }
                        self.accumulate(grads, *bid, Tensor::from_vec(&[dout], db)?)?;
                    }
                }
                Ok(())
            }
            BackOp::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats,
            } => {
                let xv = &self.nodes[*x].value;
                let (n, d) = (xv.shape()[0], xv.shape()[1]);
                let gd = g.data();
                let hd = xhat.data();
                let gam = self.nodes[*gamma].value.data();
                if self.nodes[*gamma].needs_grad {
                    let mut dgam = vec![0.0; d];
                    for i in 0..n {
                        for c in 0..d {
                            dgam[c] += gd[i * d + c] * hd[i * d + c];
                        }
                    }
                    self.accumulate(grads, *gamma, Tensor::from_vec(&[d], dgam)?)?;
                }
                if self.nodes[*beta].needs_grad {
                    let mut dbeta = vec![0.0; d];
                    for i in 0..n {
                        for c in 0..d {
                            dbeta[c] += gd[i * d + c];
                        }
                    }
                    self.accumulate(grads, *beta, Tensor::from_vec(&[d], dbeta)?)?;
                }
                if self.nodes[*x].needs_grad {
                    let mut dx = vec![0.0; n * d];
                    if *batch_stats {
                        // Batch statistics depend on x: propagate through the
                        // mean and variance.
                        for c in 0..d {
                            let istd = inv_std[c];
                            let mut sum_dxhat = 0.0;
                            let mut sum_dxhat_h = 0.0;
                            for i in 0..n {
                                let dxh = gd[i * d + c] * gam[c];
                                sum_dxhat += dxh;
                                sum_dxhat_h += dxh * hd[i * d + c];
                            }
                            let nf = n as f64;
                            for i in 0..n {
                                let dxh = gd[i * d + c] * gam[c];
                                dx[i * d + c] = istd / nf
                                    * (nf * dxh - sum_dxhat - hd[i * d + c] * sum_dxhat_h);
                            }
                        }
                    } else {
                        for c in 0..d {
                            let scale = gam[c] * inv_std[c];
                            for i in 0..n {
                                dx[i * d + c] = gd[i * d + c] * scale;
                            }
                        }
                    }
                    self.accumulate(grads, *x, Tensor::from_vec(&[n, d], dx)?)?;
                }
                Ok(())
            }
            BackOp::GatherDiff { u, indices, k } => {
                let uv = &self.nodes[*u].value;
                let (n, d) = (uv.shape()[0], uv.shape()[1]);
                let gd = g.data();
                let mut du = vec![0.0; n * d];
                for s in 0..n {
                    for j in 0..*k {
                        let nb = indices[s * k + j];
                        let grow = &gd[(s * k + j) * d..(s * k + j + 1) * d];
                        for (c, &gg) in grow.iter().enumerate() {
                            du[nb * d + c] += gg;
                            du[s * d + c] -= gg;
                        }
                    }
                }
                self.accumulate(grads, *u, Tensor::from_vec(&[n, d], du)?)
            }
            BackOp::GatherFeat { u, indices, k } => {
                let uv = &self.nodes[*u].value;
                let (n, d) = (uv.shape()[0], uv.shape()[1]);
                let gd = g.data();
                let mut du = vec![0.0; n * d];
                for s in 0..n {
                    for j in 0..*k {
                        let nb = indices[s * k + j];
                        let grow = &gd[(s * k + j) * d..(s * k + j + 1) * d];
                        for (c, &gg) in grow.iter().enumerate() {
                            du[nb * d + c] += gg;
                        }
                    }
                }
                self.accumulate(grads, *u, Tensor::from_vec(&[n, d], du)?)
            }
            BackOp::MeanNbr { x } | BackOp::SumNbr { x } => {
                let divide = matches!(self.nodes[id].op, BackOp::MeanNbr { .. });
                let xv = &self.nodes[*x].value;
                let (n, k, d) = (xv.shape()[0], xv.shape()[1], xv.shape()[2]);
                let scale = if divide { 1.0 / k as f64 } else { 1.0 };
                let gd = g.data();
                let mut dx = vec![0.0; n * k * d];
                for s in 0..n {
                    for j in 0..k {
                        for c in 0..d {
                            dx[(s * k + j) * d + c] = gd[s * d + c] * scale;
                        }
                    }
                }
                self.accumulate(grads, *x, Tensor::from_vec(&[n, k, d], dx)?)
            }
            BackOp::MaxNbr { x, argmax } => {
                let xv = &self.nodes[*x].value;
                let (n, k, d) = (xv.shape()[0], xv.shape()[1], xv.shape()[2]);
                let gd = g.data();
                let mut dx = vec![0.0; n * k * d];
                for s in 0..n {
                    for c in 0..d {
                        let j = argmax[s * d + c];
                        dx[(s * k + j) * d + c] += gd[s * d + c];
                    }
                }
                self.accumulate(grads, *x, Tensor::from_vec(&[n, k, d], dx)?)
            }
            BackOp::ConcatLast { a, b } => {
                let av = &self.nodes[*a].value;
                let bv = &self.nodes[*b].value;
                let da = *av.shape().last().unwrap();
                let db = *bv.shape().last().unwrap();
                let rows = av.numel() / da.max(1);
                let gd = g.data();
                let mut ga = vec![0.0; rows * da];
                let mut gb = vec![0.0; rows * db];
                for r in 0..rows {
                    let grow = &gd[r * (da + db)..(r + 1) * (da + db)];
                    ga[r * da..(r + 1) * da].copy_from_slice(&grow[..da]);
                    gb[r * db..(r + 1) * db].copy_from_slice(&grow[da..]);
                }
                self.accumulate(grads, *a, Tensor::from_vec(av.shape(), ga)?)?;
                self.accumulate(grads, *b, Tensor::from_vec(bv.shape(), gb)?)
            }
            BackOp::SelectRows { x, rows } => {
                let xv = &self.nodes[*x].value;
                let (n, d) = (xv.shape()[0], xv.shape()[1]);
                let gd = g.data();
                let mut dx = vec![0.0; n * d];
                for (out_row, &src) in rows.iter().enumerate() {
                    for c in 0..d {
                        dx[src * d + c] += gd[out_row * d + c];
                    }
                }
                self.accumulate(grads, *x, Tensor::from_vec(&[n, d], dx)?)
            }
            BackOp::Interp {
                coarse,
                indices,
                weights,
                k,
            } => {
                let cv = &self.nodes[*coarse].value;
                let (m, d) = (cv.shape()[0], cv.shape()[1]);
                let nf = indices.len() / k;
                let gd = g.data();
                let mut dc = vec![0.0; m * d];
                for i in 0..nf {
                    for j in 0..*k {
                        let cidx = indices[i * k + j];
                        let w = weights[i * k + j];
                        for c in 0..d {
                            dc[cidx * d + c] += w * gd[i * d + c];
                        }
                    }
                }
                self.accumulate(grads, *coarse, Tensor::from_vec(&[m, d], dc)?)
            }
            BackOp::CrossEntropy {
                logits,
                probs,
                labels,
                alpha,
            } => {
                let lv = &self.nodes[*logits].value;
                let (n, c) = (lv.shape()[0], lv.shape()[1]);
                let scale = g.data()[0] / n as f64;
                let mut dz = vec![0.0; n * c];
                for i in 0..n {
                    for j in 0..c {
                        let q = if j == labels[i] { 1.0 - alpha } else { 0.0 } + alpha / c as f64;
                        dz[i * c + j] = (probs[i * c + j] - q) * scale;
                    }
                }
                self.accumulate(grads, *logits, Tensor::from_vec(&[n, c], dz)?)
            }
            BackOp::SumAll { x } => {
                let xv = &self.nodes[*x].value;
                let gv = g.data()[0];
                self.accumulate(grads, *x, Tensor::full(xv.shape(), gv))
            }
            BackOp::WeightedSum { x, weights } => {
                let xv = &self.nodes[*x].value;
                let gv = g.data()[0];
                let data = weights.iter().map(|&w| w * gv).collect();
                self.accumulate(grads, *x, Tensor::from_vec(xv.shape(), data)?)
            }
        }
    }
}

#[cfg(test)]
#[path = "graph_tests.rs"]
mod tests;

/// Result of a backward pass.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    param_nodes: Vec<(usize, usize)>,
}

impl Gradients {
    pub fn node_grad(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.id].as_ref()
    }

    /// Per-slot parameter gradients, summed over every binding of a slot in
    /// the graph. Slots never touched by the loss stay `None`.
    pub fn param_grads(&self, store: &ParamStore) -> Result<Vec<Option<Tensor>>> {
        let mut out: Vec<Option<Tensor>> = (0..store.len()).map(|_| None).collect();
        for &(slot, node) in &self.param_nodes {
            if let Some(g) = &self.grads[node] {
                match &mut out[slot] {
                    Some(acc) => acc.add_assign(g)?,
                    empty @ None => *empty = Some(g.clone()),
                }
            }
        }
        Ok(out)
    }
}

//! Numerical verification of the diffusion view of edge handling.
//!
//! The central object is a Gaussian-smoothed unit step sampled on a 1-D grid
//! together with its closed-form derivatives. For a learned map `phi` acting
//! on the feature gradient, the time derivative of the edge slope at a sample
//! decomposes into a curvature term and a slope term,
//!
//! ```text
//! rate_i = sum_j phi''_ij (u_xx)^2 + phi'_ij u_xxx
//! ```
//!
//! At the inflection point of the profile `u_xx = 0` and `u_xxx < 0`, so the
//! sign of the rate (edge enhancement versus suppression) is decided by the
//! row sums of the Jacobian of `phi` alone. The same behavior is observable
//! by running one discrete diffusion step on the sampled profile, and the two
//! routes are compared in the verification suites.

use crate::diffcore::{Graph, Mode, ParamStore, Tensor};
use crate::du::{chain_stencil, du_stack, DuLayer};
use crate::error::{CoreError, Result};
use crate::geom::NeighborIndex;

/// Step size for probing derivatives of `phi` by central differences.
pub const PHI_FD_STEP: f64 = 1e-4;

/// Rates smaller than this in magnitude classify as neutral.
pub const NEUTRAL_DEAD_BAND: f64 = 1e-9;

/// erf with double precision via the positive-term series for small
/// arguments and a continued fraction for the tail. Odd by construction, so
/// erf(0) == 0 exactly.
fn erf(x: f64) -> f64 {
    if x == 0.0 {
        return 0.0;
    }
    let ax = x.abs();
    let value = if ax <= 2.0 {
        // erf(x) = 2x/sqrt(pi) e^{-x^2} sum_n (2x^2)^n / (1*3*...*(2n+1))
        let x2 = ax * ax;
        let mut term = 1.0;
        let mut sum = 1.0;
        let mut n = 0u32;
        while term > 1e-18 * sum {
            n += 1;
            term *= 2.0 * x2 / (2.0 * f64::from(n) + 1.0);
            sum += term;
        }
        2.0 * ax / std::f64::consts::PI.sqrt() * (-x2).exp() * sum
    } else {
        // erfc(x) = e^{-x^2}/sqrt(pi) / (x + (1/2)/(x + (2/2)/(x + (3/2)/(x + ...))))
        let mut cf = 0.0;
        for k in (1..=80u32).rev() {
            cf = (f64::from(k) / 2.0) / (ax + cf);
        }
        let erfc = (-ax * ax).exp() / std::f64::consts::PI.sqrt() / (ax + cf);
        1.0 - erfc
    };
    if x < 0.0 {
        -value
    } else {
        value
    }
}

/// Standard normal CDF.
fn gauss_cdf(x: f64) -> f64 {
    0.5 * (1.0 + erf(x / std::f64::consts::SQRT_2))
}

/// A sampled Gaussian-smoothed unit step with analytic derivatives.
#[derive(Clone, Debug)]
pub struct EdgeProfile {
    pub sigma: f64,
    pub dx: f64,
    pub xs: Vec<f64>,
    pub u: Vec<f64>,
    pub ux: Vec<f64>,
    pub uxx: Vec<f64>,
    pub uxxx: Vec<f64>,
}

impl EdgeProfile {
    pub fn len(&self) -> usize {
        self.xs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xs.is_empty()
    }

    /// Sample index of the inflection point, located as the argmax of |u_x|.
    /// For the symmetric profile this is the middle sample at x = 0.
    pub fn inflection_index(&self) -> usize {
        let mut best = 0;
        for (i, v) in self.ux.iter().enumerate() {
            if v.abs() > self.ux[best].abs() {
                best = i;
            }
        }
        best
    }
}

/// Sample u(x) = Phi(x / sigma) on a symmetric grid of `samples` points over
/// [-halfwidth, halfwidth], with closed-form first, second, and third
/// derivatives.
pub fn step_edge_profile(sigma: f64, halfwidth: f64, samples: usize) -> Result<EdgeProfile> {
    if !(sigma > 0.0) {
        return Err(CoreError::InvalidArgument(format!(
            "profile width must be positive, got {sigma}"
        )));
    }
    if !(halfwidth > 0.0) {
        return Err(CoreError::InvalidArgument(format!(
            "profile halfwidth must be positive, got {halfwidth}"
        )));
    }
    if samples < 3 || samples % 2 == 0 {
        return Err(CoreError::InvalidArgument(format!(
            "profile wants an odd sample count of at least 3, got {samples}"
        )));
    }
    let mid = (samples / 2) as f64;
    let dx = 2.0 * halfwidth / (samples - 1) as f64;
    let mut xs = Vec::with_capacity(samples);
    let mut u = Vec::with_capacity(samples);
    let mut ux = Vec::with_capacity(samples);
    let mut uxx = Vec::with_capacity(samples);
    let mut uxxx = Vec::with_capacity(samples);
    let norm = 1.0 / (sigma * (2.0 * std::f64::consts::PI).sqrt());
    for i in 0..samples {
        // Symmetric form keeps x = 0 exact at the middle sample.
        let x = (i as f64 - mid) * dx;
        let g = norm * (-x * x / (2.0 * sigma * sigma)).exp();
        xs.push(x);
        u.push(gauss_cdf(x / sigma));
        ux.push(g);
        uxx.push(-x / (sigma * sigma) * g);
        uxxx.push((x * x / (sigma * sigma * sigma * sigma) - 1.0 / (sigma * sigma)) * g);
    }
    Ok(EdgeProfile {
        sigma,
        dx,
        xs,
        u,
        ux,
        uxx,
        uxxx,
    })
}

/// Diffusivity of the classical 1-D reference equation.
#[derive(Clone, Copy, Debug)]
pub enum DiffusivityFn {
    Constant(f64),
    /// g(s) = 1 / (1 + (s / lambda)^2): the canonical hand-crafted
    /// edge-stopping diffusivity.
    PeronaMalik { lambda: f64 },
}

impl DiffusivityFn {
    pub fn eval(&self, grad: f64) -> f64 {
        match *self {
            DiffusivityFn::Constant(g) => g,
            DiffusivityFn::PeronaMalik { lambda } => {
                let r = grad / lambda;
                1.0 / (1.0 + r * r)
            }
        }
    }

    /// Supremum of g over all gradients; enters the explicit-scheme
    /// stability bound.
    pub fn max_value(&self) -> f64 {
        match *self {
            DiffusivityFn::Constant(g) => g,
            DiffusivityFn::PeronaMalik { .. } => 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            DiffusivityFn::Constant(g) => g > 0.0 && g.is_finite(),
            DiffusivityFn::PeronaMalik { lambda } => lambda > 0.0 && lambda.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(CoreError::InvalidArgument(
                "diffusivity must be positive".into(),
            ))
        }
    }
}

/// Explicit finite-difference evolution of du/dt = d/dx ( g(u_x) u_x ) with
/// zero-flux boundaries. The flux form conserves the total mass of the
/// signal by construction.
pub fn diffuse_reference_1d(
    u0: &[f64],
    dx: f64,
    g: DiffusivityFn,
    dt: f64,
    steps: usize,
) -> Result<Vec<f64>> {
    g.validate()?;
    if u0.len() < 3 {
        return Err(CoreError::InsufficientPoints(
            "reference diffusion needs at least 3 samples".into(),
        ));
    }
    if !(dx > 0.0) {
        return Err(CoreError::InvalidArgument(format!(
            "sample spacing must be positive, got {dx}"
        )));
    }
    let bound = dx * dx / (2.0 * g.max_value());
    if !(dt > 0.0) || dt > bound {
        return Err(CoreError::UnstableStep { dt, bound });
    }
    let n = u0.len();
    let mut u = u0.to_vec();
    let mut flux = vec![0.0; n - 1];
    for _ in 0..steps {
        for i in 0..n - 1 {
            let grad = (u[i + 1] - u[i]) / dx;
            flux[i] = g.eval(grad) * grad;
        }
        for i in 0..n {
            let right = if i < n - 1 { flux[i] } else { 0.0 };
            let left = if i > 0 { flux[i - 1] } else { 0.0 };
            u[i] += dt / dx * (right - left);
        }
    }
    Ok(u)
}

/// Jacobian and per-channel pure second derivatives of `phi` at `point`,
/// estimated by central differences with step [`PHI_FD_STEP`].
fn phi_derivatives(
    phi: &dyn Fn(&[f64]) -> Vec<f64>,
    point: &[f64],
) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let d = point.len();
    let base = phi(point);
    let dout = base.len();
    let mut jac = vec![vec![0.0; d]; dout];
    let mut second = vec![vec![0.0; d]; dout];
    let mut probe = point.to_vec();
    let h = PHI_FD_STEP;
    for j in 0..d {
        let orig = probe[j];
        probe[j] = orig + h;
        let plus = phi(&probe);
        probe[j] = orig - h;
        let minus = phi(&probe);
        probe[j] = orig;
        for i in 0..dout {
            jac[i][j] = (plus[i] - minus[i]) / (2.0 * h);
            second[i][j] = (plus[i] - 2.0 * base[i] + minus[i]) / (h * h);
        }
    }
    (jac, second)
}

/// The two contributions to the edge change rate at one sample.
#[derive(Clone, Copy, Debug, Default)]
pub struct RateTerms {
    /// sum_j phi''_ij (u_xx)^2; vanishes at the inflection point.
    pub curvature: f64,
    /// sum_j phi'_ij u_xxx; decides the inflection-point behavior.
    pub slope: f64,
}

impl RateTerms {
    pub fn total(&self) -> f64 {
        self.curvature + self.slope
    }
}

/// Per-sample edge change rate of output channel `channel` for a map `phi`
/// of `dim` input channels, each carrying the same profile. Derivatives of
/// `phi` are taken at the local gradient value.
pub fn edge_change_rate_terms(
    phi: &dyn Fn(&[f64]) -> Vec<f64>,
    dim: usize,
    profile: &EdgeProfile,
    channel: usize,
) -> Result<Vec<RateTerms>> {
    if dim == 0 {
        return Err(CoreError::InvalidArgument(
            "phi needs at least one channel".into(),
        ));
    }
    let probe = vec![0.0; dim];
    let out_dim = phi(&probe).len();
    if channel >= out_dim {
        return Err(CoreError::ShapeMismatch(format!(
            "channel {channel} of a {out_dim}-channel map"
        )));
    }
    let mut rates = Vec::with_capacity(profile.len());
    for s in 0..profile.len() {
        let point = vec![profile.ux[s]; dim];
        let (jac, second) = phi_derivatives(phi, &point);
        let mut terms = RateTerms::default();
        let uxx2 = profile.uxx[s] * profile.uxx[s];
        for j in 0..dim {
            terms.curvature += second[channel][j] * uxx2;
            terms.slope += jac[channel][j] * profile.uxxx[s];
        }
        rates.push(terms);
    }
    Ok(rates)
}

/// Per-sample total rate; see [`edge_change_rate_terms`].
pub fn edge_change_rate(
    phi: &dyn Fn(&[f64]) -> Vec<f64>,
    dim: usize,
    profile: &EdgeProfile,
    channel: usize,
) -> Result<Vec<f64>> {
    Ok(edge_change_rate_terms(phi, dim, profile, channel)?
        .iter()
        .map(RateTerms::total)
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EdgeBehavior {
    Enhance,
    Suppress,
    Neutral,
}

impl EdgeBehavior {
    pub fn as_str(&self) -> &'static str {
        match self {
            EdgeBehavior::Enhance => "enhance",
            EdgeBehavior::Suppress => "suppress",
            EdgeBehavior::Neutral => "neutral",
        }
    }
}

/// Classify each output channel by the sign of the analytic rate at the
/// inflection point, with a dead band around zero.
pub fn classify_edge_behavior(
    phi: &dyn Fn(&[f64]) -> Vec<f64>,
    dim: usize,
    profile: &EdgeProfile,
) -> Result<Vec<EdgeBehavior>> {
    let out_dim = phi(&vec![0.0; dim]).len();
    let at = profile.inflection_index();
    let mut out = Vec::with_capacity(out_dim);
    for channel in 0..out_dim {
        let terms = edge_change_rate_terms(phi, dim, profile, channel)?;
        let rate = terms[at].total();
        out.push(if rate.abs() < NEUTRAL_DEAD_BAND {
            EdgeBehavior::Neutral
        } else if rate > 0.0 {
            EdgeBehavior::Enhance
        } else {
            EdgeBehavior::Suppress
        });
    }
    Ok(out)
}

/// Change of the discrete edge slope |u_x(0)| of `channel` after one
/// diffusion-unit step on the sampled profile with a 1-D chain stencil.
/// Positive means the discrete step enhanced the edge.
pub fn discrete_edge_delta(
    layer: &DuLayer,
    store: &mut ParamStore,
    profile: &EdgeProfile,
    channel: usize,
) -> Result<f64> {
    let d = layer.dim;
    if channel >= d {
        return Err(CoreError::ShapeMismatch(format!(
            "channel {channel} of a {d}-channel layer"
        )));
    }
    let n = profile.len();
    let mut data = vec![0.0; n * d];
    for (i, &v) in profile.u.iter().enumerate() {
        for c in 0..d {
            data[i * d + c] = v;
        }
    }
    let stencil = chain_stencil(n)?;
    let mut graph = Graph::new();
    let u = graph.leaf(Tensor::from_vec(&[n, d], data)?)?;
    let out = du_stack(&mut graph, store, &[layer], u, &stencil, 1, Mode::Eval)?;
    let mid = n / 2;
    let slope = |t: &Tensor| {
        (t.data()[(mid + 1) * d + channel] - t.data()[(mid - 1) * d + channel]) / (2.0 * profile.dx)
    };
    let before = slope(graph.value(u));
    let after = slope(graph.value(out));
    Ok(after.abs() - before.abs())
}

/// Which reading of local feature smoothness to compute.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum SmoothnessKind {
    /// || sum_n (f_n - f_s) ||: the aggregate-difference form. Opposing
    /// differences cancel.
    #[default]
    AggregateDifference,
    /// sum_n || f_n - f_s ||: the per-edge magnitude form, which cannot
    /// cancel.
    SumOfNorms,
}

/// Per-point local feature smoothness. High values mark points whose feature
/// disagrees with its neighborhood.
pub fn local_smoothness(
    features: &Tensor,
    nbr: &NeighborIndex,
    kind: SmoothnessKind,
) -> Result<Vec<f64>> {
    if features.shape().len() != 2 {
        return Err(CoreError::ShapeMismatch(format!(
            "smoothness wants n x d features, got {:?}",
            features.shape()
        )));
    }
    let (n, d) = (features.shape()[0], features.shape()[1]);
    if nbr.len() != n {
        return Err(CoreError::ShapeMismatch(format!(
            "neighbor index covers {} points, features have {}",
            nbr.len(),
            n
        )));
    }
    nbr.check_against(n)?;
    let fd = features.data();
    let mut out = Vec::with_capacity(n);
    let mut acc = vec![0.0; d];
    for s in 0..n {
        let center = &fd[s * d..(s + 1) * d];
        match kind {
            SmoothnessKind::AggregateDifference => {
                acc.iter_mut().for_each(|v| *v = 0.0);
                for &nb in nbr.row(s) {
                    let nf = &fd[nb * d..(nb + 1) * d];
                    for ((a, &x), &c) in acc.iter_mut().zip(nf).zip(center) {
                        *a += x - c;
                    }
                }
                out.push(acc.iter().map(|v| v * v).sum::<f64>().sqrt());
            }
            SmoothnessKind::SumOfNorms => {
                let mut total = 0.0;
                for &nb in nbr.row(s) {
                    let nf = &fd[nb * d..(nb + 1) * d];
                    let norm2: f64 = nf
                        .iter()
                        .zip(center)
                        .map(|(&x, &c)| (x - c) * (x - c))
                        .sum();
                    total += norm2.sqrt();
                }
                out.push(total);
            }
        }
    }
    Ok(out)
}

/// Signed smoothness change: positive marks enhancement, negative
/// suppression.
pub fn smoothness_delta(
    before: &Tensor,
    after: &Tensor,
    nbr: &NeighborIndex,
    kind: SmoothnessKind,
) -> Result<Vec<f64>> {
    if before.shape() != after.shape() {
        return Err(CoreError::ShapeMismatch(format!(
            "smoothness delta: {:?} vs {:?}",
            before.shape(),
            after.shape()
        )));
    }
    let b = local_smoothness(before, nbr, kind)?;
    let a = local_smoothness(after, nbr, kind)?;
    Ok(a.iter().zip(b.iter()).map(|(x, y)| x - y).collect())
}

/// Mask of points within `factor` median nearest-neighbor distances of the
/// label boundary (the nearest point carrying a different label).
pub fn label_boundary_band(cloud: &crate::geom::PointCloud, factor: f64) -> Result<Vec<bool>> {
    let labels = cloud.labels().ok_or_else(|| {
        CoreError::InvalidArgument("boundary band needs a labeled cloud".into())
    })?;
    let n = cloud.len();
    if n < 2 {
        return Err(CoreError::InsufficientPoints(
            "boundary band needs at least 2 points".into(),
        ));
    }
    let nn = crate::geom::knn_graph(cloud, 1, false)?;
    let mut nn_dists: Vec<f64> = (0..n).map(|i| nn.distances_row(i)[0]).collect();
    nn_dists.sort_unstable_by(f64::total_cmp);
    let median = nn_dists[n / 2];
    let pts = cloud.positions();
    let mut band = vec![false; n];
    for i in 0..n {
        let mut best = f64::INFINITY;
        for j in 0..n {
            if labels[j] == labels[i] {
                continue;
            }
            let dx = pts[i][0] - pts[j][0];
            let dy = pts[i][1] - pts[j][1];
            let dz = pts[i][2] - pts[j][2];
            best = best.min(dx * dx + dy * dy + dz * dz);
        }
        band[i] = best.sqrt() <= factor * median;
    }
    Ok(band)
}

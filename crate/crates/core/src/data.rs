//! Synthetic labeled point clouds, training augmentations, and CSV/PLY I/O.
//!
//! Four shape recipes cover the qualitative segmentation cases: a part
//! boundary on a smooth surface (two_part_cylinder), sharp geometric edges
//! away from the label boundary (l_block), a scene-like layout
//! (plane_with_boxes), and a pure feature step on flat geometry (step_field)
//! that isolates feature edges from geometric ones. Generation is
//! deterministic per seed.

use crate::error::{CoreError, Result};
use crate::geom::PointCloud;
use crate::rng::Rng;
use std::fmt::Write as _;
use std::path::Path;

/// Feature noise of the step_field recipe: strong enough that per-point
/// classification is ambiguous while neighborhoods remain informative.
pub const STEP_FIELD_FEATURE_NOISE: f64 = 0.65;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ShapeKind {
    TwoPartCylinder,
    LBlock,
    PlaneWithBoxes,
    StepField,
}

impl ShapeKind {
    pub const ALL: [ShapeKind; 4] = [
        ShapeKind::TwoPartCylinder,
        ShapeKind::LBlock,
        ShapeKind::PlaneWithBoxes,
        ShapeKind::StepField,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ShapeKind::TwoPartCylinder => "two_part_cylinder",
            ShapeKind::LBlock => "l_block",
            ShapeKind::PlaneWithBoxes => "plane_with_boxes",
            ShapeKind::StepField => "step_field",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "two_part_cylinder" => Ok(ShapeKind::TwoPartCylinder),
            "l_block" => Ok(ShapeKind::LBlock),
            "plane_with_boxes" => Ok(ShapeKind::PlaneWithBoxes),
            "step_field" => Ok(ShapeKind::StepField),
            other => Err(CoreError::InvalidArgument(format!(
                "unknown shape recipe {other}"
            ))),
        }
    }

    pub fn num_classes(&self) -> usize {
        match self {
            ShapeKind::PlaneWithBoxes => 3,
            _ => 2,
        }
    }

    /// Extra per-point feature channels carried by the recipe.
    pub fn feature_dim(&self) -> usize {
        match self {
            ShapeKind::StepField => 1,
            _ => 0,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct ShapeRecipe {
    pub kind: ShapeKind,
    pub n: usize,
    pub noise_sigma: f64,
    pub seed: u64,
}

/// Deterministically sample one labeled cloud from a recipe.
pub fn generate(recipe: &ShapeRecipe) -> Result<PointCloud> {
    if recipe.n < 32 {
        return Err(CoreError::InsufficientPoints(format!(
            "recipe wants at least 32 points, got {}",
            recipe.n
        )));
    }
    if recipe.noise_sigma < 0.0 {
        return Err(CoreError::InvalidArgument(
            "noise sigma must be nonnegative".into(),
        ));
    }
    let mut rng = Rng::from_path(recipe.seed, "data.generate");
    let mut cloud = match recipe.kind {
        ShapeKind::TwoPartCylinder => two_part_cylinder(recipe.n, &mut rng)?,
        ShapeKind::LBlock => l_block(recipe.n, &mut rng)?,
        ShapeKind::PlaneWithBoxes => plane_with_boxes(recipe.n, &mut rng)?,
        ShapeKind::StepField => step_field(recipe.n, &mut rng)?,
    };
    if recipe.noise_sigma > 0.0 {
        for p in cloud.positions_mut() {
            for v in p.iter_mut() {
                *v += rng.normal_scaled(recipe.noise_sigma);
            }
        }
    }
    Ok(cloud)
}

fn two_part_cylinder(n: usize, rng: &mut Rng) -> Result<PointCloud> {
    // Elongated proportions keep the cap boundary rings a modest fraction
    // of the surface, so mixed neighborhoods stay well below a third of the
    // points at the default sampling density. Caps are oversampled to a
    // fixed fifth of the points; uniform-by-area allocation would leave the
    // minority class too scarce to learn.
    let radius = 0.3;
    let height = 6.0;
    let n_caps = n / 5;
    let n_body = n - n_caps;
    let mut positions = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n_body {
        let theta = rng.uniform(0.0, std::f64::consts::TAU);
        let z = rng.uniform(0.0, height);
        // Shallow ripple adds intra-part geometric texture not aligned with
        // the cap boundary.
        let rho = radius * (1.0 + 0.08 * (6.0 * theta).sin());
        positions.push([rho * theta.cos(), rho * theta.sin(), z]);
        labels.push(0);
    }
    for i in 0..n_caps {
        let top = i % 2 == 0;
        let theta = rng.uniform(0.0, std::f64::consts::TAU);
        let rho = radius * rng.next_f64().sqrt();
        let z = if top { height } else { 0.0 };
        positions.push([rho * theta.cos(), rho * theta.sin(), z]);
        labels.push(1);
    }
    PointCloud::new(positions)?.with_labels(labels)
}

/// An axis-aligned surface rectangle: origin plus two edge vectors.
struct Rect {
    origin: [f64; 3],
    u: [f64; 3],
    v: [f64; 3],
}

impl Rect {
    fn area(&self) -> f64 {
        let lu = (self.u[0] * self.u[0] + self.u[1] * self.u[1] + self.u[2] * self.u[2]).sqrt();
        let lv = (self.v[0] * self.v[0] + self.v[1] * self.v[1] + self.v[2] * self.v[2]).sqrt();
        lu * lv
    }

    fn sample(&self, rng: &mut Rng) -> [f64; 3] {
        let (a, b) = (rng.next_f64(), rng.next_f64());
        [
            self.origin[0] + a * self.u[0] + b * self.v[0],
            self.origin[1] + a * self.u[1] + b * self.v[1],
            self.origin[2] + a * self.u[2] + b * self.v[2],
        ]
    }
}

fn sample_rect_surface(rects: &[Rect], rng: &mut Rng) -> [f64; 3] {
    let total: f64 = rects.iter().map(Rect::area).sum();
    let mut pick = rng.next_f64() * total;
    for r in rects {
        let a = r.area();
        if pick < a {
            return r.sample(rng);
        }
        pick -= a;
    }
    rects.last().expect("nonempty rect list").sample(rng)
}

/// A step block: a flat slab carrying a smaller box on top. The lower part
/// (label 0) and upper part (label 1) meet along the box footprint; the many
/// slab and box corners are sharp geometric edges away from that boundary.
fn l_block(n: usize, rng: &mut Rng) -> Result<PointCloud> {
    let rects = [
        // Slab 1 x 1 x 0.5: bottom, four sides, and the visible top ring
        // around the box footprint [0, 0.5] x [0.25, 0.75].
        Rect { origin: [0.0, 0.0, 0.0], u: [1.0, 0.0, 0.0], v: [0.0, 1.0, 0.0] },
        Rect { origin: [0.0, 0.0, 0.0], u: [0.0, 1.0, 0.0], v: [0.0, 0.0, 0.5] },
        Rect { origin: [1.0, 0.0, 0.0], u: [0.0, 1.0, 0.0], v: [0.0, 0.0, 0.5] },
        Rect { origin: [0.0, 0.0, 0.0], u: [1.0, 0.0, 0.0], v: [0.0, 0.0, 0.5] },
        Rect { origin: [0.0, 1.0, 0.0], u: [1.0, 0.0, 0.0], v: [0.0, 0.0, 0.5] },
        Rect { origin: [0.5, 0.0, 0.5], u: [0.5, 0.0, 0.0], v: [0.0, 1.0, 0.0] },
        Rect { origin: [0.0, 0.0, 0.5], u: [0.5, 0.0, 0.0], v: [0.0, 0.25, 0.0] },
        Rect { origin: [0.0, 0.75, 0.5], u: [0.5, 0.0, 0.0], v: [0.0, 0.25, 0.0] },
        // Box 0.5 x 0.5 x 0.5 on top: lid and four walls.
        Rect { origin: [0.0, 0.25, 1.0], u: [0.5, 0.0, 0.0], v: [0.0, 0.5, 0.0] },
        Rect { origin: [0.0, 0.25, 0.5], u: [0.0, 0.5, 0.0], v: [0.0, 0.0, 0.5] },
        Rect { origin: [0.5, 0.25, 0.5], u: [0.0, 0.5, 0.0], v: [0.0, 0.0, 0.5] },
        Rect { origin: [0.0, 0.25, 0.5], u: [0.5, 0.0, 0.0], v: [0.0, 0.0, 0.5] },
        Rect { origin: [0.0, 0.75, 0.5], u: [0.5, 0.0, 0.0], v: [0.0, 0.0, 0.5] },
    ];
    let mut positions = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let p = sample_rect_surface(&rects, rng);
        labels.push(usize::from(p[2] > 0.5));
        positions.push(p);
    }
    PointCloud::new(positions)?.with_labels(labels)
}

/// Ground plane with three boxes: two small (class 1) and one large
/// (class 2). Point counts per class are fixed fractions of n, so the label
/// balance is stable across seeds; box placement and sizes vary per seed.
fn plane_with_boxes(n: usize, rng: &mut Rng) -> Result<PointCloud> {
    let n_plane = (n * 6) / 10;
    let n_small = (n * 22) / 100;
    let n_large = n - n_plane - n_small;
    let mut positions = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n_plane {
        positions.push([rng.uniform(0.0, 5.0), rng.uniform(0.0, 5.0), 0.0]);
        labels.push(0);
    }
    // Disjoint placement regions keep the boxes from intersecting. Tall
    // boxes keep most wall points away from the plane contact ring.
    let small_a = sample_box(rng, [0.7, 0.7], [0.12, 0.17], [0.5, 0.7]);
    let small_b = sample_box(rng, [3.4, 0.9], [0.12, 0.17], [0.5, 0.7]);
    let large = sample_box(rng, [1.8, 3.0], [0.25, 0.33], [0.8, 1.0]);
    for i in 0..n_small {
        let b = if i % 2 == 0 { &small_a } else { &small_b };
        positions.push(sample_box_surface(rng, b));
        labels.push(1);
    }
    for _ in 0..n_large {
        positions.push(sample_box_surface(rng, &large));
        labels.push(2);
    }
    PointCloud::new(positions)?.with_labels(labels)
}

/// Axis-aligned box resting on the plane: [min, size] in x/y, height in z.
struct BoxSpec {
    min: [f64; 2],
    size: [f64; 3],
}

fn sample_box(
    rng: &mut Rng,
    corner: [f64; 2],
    footprint: [f64; 2],
    height: [f64; 2],
) -> BoxSpec {
    let w = rng.uniform(footprint[0], footprint[1]);
    let d = rng.uniform(footprint[0], footprint[1]);
    let h = rng.uniform(height[0], height[1]);
    let jitter = 0.1;
    BoxSpec {
        min: [
            corner[0] + rng.uniform(0.0, jitter),
            corner[1] + rng.uniform(0.0, jitter),
        ],
        size: [w, d, h],
    }
}

/// Uniform sample over the five visible faces (no bottom).
fn sample_box_surface(rng: &mut Rng, b: &BoxSpec) -> [f64; 3] {
    let [w, d, h] = b.size;
    let areas = [w * d, d * h, d * h, w * h, w * h]; // top, x-, x+, y-, y+
    let total: f64 = areas.iter().sum();
    let mut pick = rng.next_f64() * total;
    let mut face = 0;
    for (i, a) in areas.iter().enumerate() {
        if pick < *a {
            face = i;
            break;
        }
        pick -= a;
    }
    let (u, v) = (rng.next_f64(), rng.next_f64());
    let (x0, y0) = (b.min[0], b.min[1]);
    match face {
        0 => [x0 + u * w, y0 + v * d, h],
        1 => [x0, y0 + u * d, v * h],
        2 => [x0 + w, y0 + u * d, v * h],
        3 => [x0 + u * w, y0, v * h],
        _ => [x0 + u * w, y0 + d, v * h],
    }
}

/// Flat plane carrying a noisy feature step across x = 1: the label boundary
/// is invisible in the geometry and lives in the feature channel only.
fn step_field(n: usize, rng: &mut Rng) -> Result<PointCloud> {
    let mut positions = Vec::with_capacity(n);
    let mut features = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let x = rng.uniform(0.0, 2.0);
        let y = rng.uniform(0.0, 2.0);
        positions.push([x, y, 0.0]);
        let high = x >= 1.0;
        let level = if high { 0.5 } else { -0.5 };
        features.push(level + rng.normal_scaled(STEP_FIELD_FEATURE_NOISE));
        labels.push(usize::from(high));
    }
    PointCloud::new(positions)?
        .with_features(1, features)?
        .with_labels(labels)
}

/// Training-time random transforms. Ranges follow the usual point-cloud
/// protocol: anisotropic scale in [0.66, 1.5], translation in [-0.2, 0.2],
/// jitter sigma 0.01, rotation about the vertical axis.
#[derive(Clone, Copy, Debug)]
pub struct AugmentOps {
    pub scale: Option<(f64, f64)>,
    pub translate: Option<f64>,
    pub jitter_sigma: Option<f64>,
    pub vertical_rotation: bool,
}

impl Default for AugmentOps {
    fn default() -> Self {
        AugmentOps {
            scale: Some((0.66, 1.5)),
            translate: Some(0.2),
            jitter_sigma: Some(0.01),
            vertical_rotation: true,
        }
    }
}

impl AugmentOps {
    pub const NONE: AugmentOps = AugmentOps {
        scale: None,
        translate: None,
        jitter_sigma: None,
        vertical_rotation: false,
    };

    fn validate(&self) -> Result<()> {
        if let Some((lo, hi)) = self.scale {
            if !(lo > 0.0 && hi >= lo) {
                return Err(CoreError::InvalidArgument(format!(
                    "scale range [{lo}, {hi}] is invalid"
                )));
            }
        }
        if let Some(t) = self.translate {
            if t < 0.0 {
                return Err(CoreError::InvalidArgument(
                    "translation bound must be nonnegative".into(),
                ));
            }
        }
        if let Some(s) = self.jitter_sigma {
            if s < 0.0 {
                return Err(CoreError::InvalidArgument(
                    "jitter sigma must be nonnegative".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Apply the enabled transforms in order: vertical rotation, anisotropic
/// scale, translation, jitter. Features and labels pass through unchanged.
pub fn augment(cloud: &PointCloud, ops: &AugmentOps, seed: u64) -> Result<PointCloud> {
    ops.validate()?;
    let mut rng = Rng::from_path(seed, "augment");
    let mut out = cloud.clone();
    if ops.vertical_rotation {
        let angle = rng.uniform(0.0, std::f64::consts::TAU);
        let (s, c) = angle.sin_cos();
        for p in out.positions_mut() {
            let (x, y) = (p[0], p[1]);
            p[0] = c * x - s * y;
            p[1] = s * x + c * y;
        }
    }
    if let Some((lo, hi)) = ops.scale {
        let f = [
            rng.uniform(lo, hi),
            rng.uniform(lo, hi),
            rng.uniform(lo, hi),
        ];
        for p in out.positions_mut() {
            for (v, s) in p.iter_mut().zip(&f) {
                *v *= s;
            }
        }
    }
    if let Some(t) = ops.translate {
        let shift = [
            rng.uniform(-t, t),
            rng.uniform(-t, t),
            rng.uniform(-t, t),
        ];
        for p in out.positions_mut() {
            for (v, s) in p.iter_mut().zip(&shift) {
                *v += s;
            }
        }
    }
    if let Some(sigma) = ops.jitter_sigma {
        if sigma > 0.0 {
            for p in out.positions_mut() {
                for v in p.iter_mut() {
                    *v += rng.normal_scaled(sigma);
                }
            }
        }
    }
    Ok(out)
}

/// A train/test collection of labeled clouds from one recipe.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub samples: Vec<PointCloud>,
    pub num_classes: usize,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

impl Dataset {
    pub fn train_samples(&self) -> impl Iterator<Item = &PointCloud> {
        self.train.iter().map(|&i| &self.samples[i])
    }

    pub fn test_samples(&self) -> impl Iterator<Item = &PointCloud> {
        self.test.iter().map(|&i| &self.samples[i])
    }
}

/// Generate `train + test` samples with per-sample seed streams and disjoint
/// splits. Every class must appear in the training split.
pub fn build_dataset(
    kind: ShapeKind,
    n: usize,
    noise_sigma: f64,
    seed: u64,
    train: usize,
    test: usize,
) -> Result<Dataset> {
    if train == 0 || test == 0 {
        return Err(CoreError::InvalidArgument(
            "dataset wants at least one train and one test sample".into(),
        ));
    }
    let mut samples = Vec::with_capacity(train + test);
    for i in 0..train + test {
        let sample_seed = Rng::from_path_indexed(seed, "data.sample", i as u64).next_u64();
        samples.push(generate(&ShapeRecipe {
            kind,
            n,
            noise_sigma,
            seed: sample_seed,
        })?);
    }
    let num_classes = kind.num_classes();
    let dataset = Dataset {
        samples,
        num_classes,
        train: (0..train).collect(),
        test: (train..train + test).collect(),
    };
    let mut seen = vec![false; num_classes];
    for s in dataset.train_samples() {
        for &l in s.labels().unwrap_or(&[]) {
            seen[l] = true;
        }
    }
    if !seen.iter().all(|&s| s) {
        return Err(CoreError::InvalidArgument(
            "a class is missing from the training split".into(),
        ));
    }
    Ok(dataset)
}

/// Fraction of points whose k-neighborhood mixes labels; the tasks are only
/// interesting when this sits well away from 0 and 1.
pub fn boundary_fraction(cloud: &PointCloud, k: usize) -> Result<f64> {
    let labels = cloud
        .labels()
        .ok_or_else(|| CoreError::InvalidArgument("boundary fraction needs labels".into()))?;
    let nbr = crate::geom::knn_graph(cloud, k, false)?;
    let mut mixed = 0usize;
    for i in 0..cloud.len() {
        if nbr.row(i).iter().any(|&j| labels[j] != labels[i]) {
            mixed += 1;
        }
    }
    Ok(mixed as f64 / cloud.len() as f64)
}

fn push_f64(out: &mut String, v: f64) {
    // Shortest round-trip decimal form; exact on re-parse.
    write!(out, "{v}").unwrap();
}

/// Write a cloud as CSV with header `x,y,z[,f1..fd][,label]`.
pub fn write_cloud(path: &Path, cloud: &PointCloud) -> Result<()> {
    std::fs::write(path, cloud_to_csv(cloud))?;
    Ok(())
}

pub fn cloud_to_csv(cloud: &PointCloud) -> String {
    let d = cloud.feature_dim();
    let mut out = String::from("x,y,z");
    for i in 1..=d {
        write!(out, ",f{i}").unwrap();
    }
    if cloud.labels().is_some() {
        out.push_str(",label");
    }
    out.push('\n');
    for i in 0..cloud.len() {
        let p = cloud.positions()[i];
        push_f64(&mut out, p[0]);
        out.push(',');
        push_f64(&mut out, p[1]);
        out.push(',');
        push_f64(&mut out, p[2]);
        if let Some(row) = cloud.feature_row(i) {
            for v in row {
                out.push(',');
                push_f64(&mut out, *v);
            }
        }
        if let Some(labels) = cloud.labels() {
            write!(out, ",{}", labels[i]).unwrap();
        }
        out.push('\n');
    }
    out
}

pub fn read_cloud(path: &Path) -> Result<PointCloud> {
    let text = std::fs::read_to_string(path)?;
    cloud_from_csv(&text)
}

pub fn cloud_from_csv(text: &str) -> Result<PointCloud> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| CoreError::Parse {
            line: 1,
            msg: "empty file".into(),
        })?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    if cols.len() < 3 || cols[0] != "x" || cols[1] != "y" || cols[2] != "z" {
        return Err(CoreError::Parse {
            line: 1,
            msg: format!("header must start with x,y,z, got {header:?}"),
        });
    }
    let has_label = cols.last() == Some(&"label");
    let feature_dim = cols.len() - 3 - usize::from(has_label);
    for (i, col) in cols[3..3 + feature_dim].iter().enumerate() {
        let want = format!("f{}", i + 1);
        if *col != want {
            return Err(CoreError::Parse {
                line: 1,
                msg: format!("expected feature column {want}, got {col}"),
            });
        }
    }
    let expected = cols.len();
    let mut positions = Vec::new();
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for (idx, line) in lines {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let lineno = idx + 1;
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != expected {
            return Err(CoreError::Parse {
                line: lineno,
                msg: format!("expected {} fields, got {}", expected, fields.len()),
            });
        }
        let mut coord = [0.0; 3];
        for (a, f) in coord.iter_mut().zip(&fields[..3]) {
            *a = f.parse().map_err(|_| CoreError::Parse {
                line: lineno,
                msg: format!("bad coordinate {f}"),
            })?;
        }
        positions.push(coord);
        for f in &fields[3..3 + feature_dim] {
            let v: f64 = f.parse().map_err(|_| CoreError::Parse {
                line: lineno,
                msg: format!("bad feature {f}"),
            })?;
            features.push(v);
        }
        if has_label {
            let l: usize = fields[expected - 1].parse().map_err(|_| CoreError::Parse {
                line: lineno,
                msg: format!("bad label {}", fields[expected - 1]),
            })?;
            labels.push(l);
        }
    }
    let mut cloud = PointCloud::new(positions)?;
    if feature_dim > 0 {
        cloud = cloud.with_features(feature_dim, features)?;
    }
    if has_label {
        cloud = cloud.with_labels(labels)?;
    }
    Ok(cloud)
}

/// ASCII PLY with one float scalar property per point.
pub fn write_scalar_ply(
    path: &Path,
    positions: &[[f64; 3]],
    property: &str,
    values: &[f64],
) -> Result<()> {
    if positions.len() != values.len() {
        return Err(CoreError::ShapeMismatch(format!(
            "{} positions for {} scalar values",
            positions.len(),
            values.len()
        )));
    }
    let mut out = String::new();
    out.push_str("ply\nformat ascii 1.0\n");
    writeln!(out, "element vertex {}", positions.len()).unwrap();
    out.push_str("property float x\nproperty float y\nproperty float z\n");
    writeln!(out, "property float {property}").unwrap();
    out.push_str("end_header\n");
    for (p, v) in positions.iter().zip(values) {
        writeln!(out, "{} {} {} {}", p[0], p[1], p[2], v).unwrap();
    }
    std::fs::write(path, out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn recipe(kind: ShapeKind, n: usize, noise: f64, seed: u64) -> ShapeRecipe {
        ShapeRecipe {
            kind,
            n,
            noise_sigma: noise,
            seed,
        }
    }

    #[test]
    fn cylinder_caps_sit_exactly_on_the_end_planes() {
        let cloud = generate(&recipe(ShapeKind::TwoPartCylinder, 200, 0.0, 3)).unwrap();
        let labels = cloud.labels().unwrap();
        let mut cap_count = 0;
        for (p, &l) in cloud.positions().iter().zip(labels) {
            if l == 1 {
                cap_count += 1;
                assert!(
                    p[2] == 0.0 || p[2] == 6.0,
                    "cap point off the end planes: {:?}",
                    p
                );
            }
        }
        assert!(cap_count > 0);
    }

    #[test]
    fn generation_is_deterministic() {
        for kind in ShapeKind::ALL {
            let a = generate(&recipe(kind, 128, 0.02, 11)).unwrap();
            let b = generate(&recipe(kind, 128, 0.02, 11)).unwrap();
            assert_eq!(a, b, "{kind:?} must be bit-identical per seed");
            let c = generate(&recipe(kind, 128, 0.02, 12)).unwrap();
            assert_ne!(a, c, "{kind:?} must vary with the seed");
        }
    }

    #[test]
    fn minimum_point_count_is_enforced() {
        assert!(generate(&recipe(ShapeKind::LBlock, 31, 0.0, 0)).is_err());
        assert!(generate(&recipe(ShapeKind::LBlock, 32, 0.0, 0)).is_ok());
    }

    #[test]
    fn plane_with_boxes_label_balance_over_seeds() {
        // Counts per class are fixed fractions of n by construction.
        for seed in 0..100 {
            let cloud = generate(&recipe(ShapeKind::PlaneWithBoxes, 256, 0.0, seed)).unwrap();
            let labels = cloud.labels().unwrap();
            let mut counts = [0usize; 3];
            for &l in labels {
                counts[l] += 1;
            }
            let n = cloud.len() as f64;
            let fr: Vec<f64> = counts.iter().map(|&c| c as f64 / n).collect();
            assert!((fr[0] - 0.6).abs() < 0.02, "plane fraction {}", fr[0]);
            assert!((fr[1] - 0.22).abs() < 0.02, "small-box fraction {}", fr[1]);
            assert!((fr[2] - 0.18).abs() < 0.02, "large-box fraction {}", fr[2]);
        }
    }

    #[test]
    fn every_recipe_has_a_boundary_band_between_2_and_30_percent() {
        for kind in ShapeKind::ALL {
            for seed in [0u64, 7, 19] {
                let cloud = generate(&recipe(kind, 512, 0.02, seed)).unwrap();
                let f = boundary_fraction(&cloud, 16).unwrap();
                assert!(
                    (0.02..=0.30).contains(&f),
                    "{kind:?} seed {seed}: boundary fraction {f:.3}"
                );
            }
        }
    }

    #[test]
    fn every_recipe_has_all_classes_and_finite_values() {
        for kind in ShapeKind::ALL {
            let cloud = generate(&recipe(kind, 256, 0.01, 5)).unwrap();
            assert_eq!(cloud.num_classes(), kind.num_classes());
            assert_eq!(cloud.feature_dim(), kind.feature_dim());
        }
    }

    #[test]
    fn augment_disabled_is_identity() {
        let cloud = generate(&recipe(ShapeKind::TwoPartCylinder, 64, 0.0, 1)).unwrap();
        let out = augment(&cloud, &AugmentOps::NONE, 9).unwrap();
        assert_eq!(out, cloud);
    }

    #[test]
    fn scale_factors_stay_in_range() {
        // Recover the factors from a probe cloud with unit coordinates.
        let probe = PointCloud::new(vec![[1.0, 1.0, 1.0]; 32]).unwrap();
        let ops = AugmentOps {
            scale: Some((0.66, 1.5)),
            translate: None,
            jitter_sigma: None,
            vertical_rotation: false,
        };
        let mut draws = 0usize;
        for seed in 0..3334 {
            let out = augment(&probe, &ops, seed).unwrap();
            let p = out.positions()[0];
            for f in p {
                assert!((0.66..1.5).contains(&f), "factor {f} out of range");
                draws += 1;
            }
        }
        assert!(draws >= 10_000);
    }

    #[test]
    fn vertical_rotation_preserves_z_and_horizontal_distances() {
        let cloud = generate(&recipe(ShapeKind::LBlock, 128, 0.0, 2)).unwrap();
        let ops = AugmentOps {
            scale: None,
            translate: None,
            jitter_sigma: None,
            vertical_rotation: true,
        };
        let out = augment(&cloud, &ops, 4).unwrap();
        for (a, b) in cloud.positions().iter().zip(out.positions()) {
            assert!((a[2] - b[2]).abs() < 1e-12, "z preserved");
        }
        for i in (0..cloud.len()).step_by(17) {
            for j in (i + 1..cloud.len()).step_by(23) {
                let d0 = {
                    let (a, b) = (cloud.positions()[i], cloud.positions()[j]);
                    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
                };
                let d1 = {
                    let (a, b) = (out.positions()[i], out.positions()[j]);
                    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
                };
                assert!((d0 - d1).abs() < 1e-9, "horizontal distances preserved");
            }
        }
    }

    #[test]
    fn augment_never_touches_labels_or_counts() {
        let cloud = generate(&recipe(ShapeKind::StepField, 96, 0.0, 8)).unwrap();
        let out = augment(&cloud, &AugmentOps::default(), 123).unwrap();
        assert_eq!(out.len(), cloud.len());
        assert_eq!(out.labels(), cloud.labels());
        assert_eq!(out.features(), cloud.features());
    }

    #[test]
    fn augment_rejects_invalid_ranges() {
        let cloud = generate(&recipe(ShapeKind::StepField, 64, 0.0, 8)).unwrap();
        let bad = AugmentOps {
            scale: Some((1.5, 0.66)),
            ..AugmentOps::NONE
        };
        assert!(augment(&cloud, &bad, 0).is_err());
        let bad = AugmentOps {
            translate: Some(-0.1),
            ..AugmentOps::NONE
        };
        assert!(augment(&cloud, &bad, 0).is_err());
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let cloud = generate(&recipe(ShapeKind::StepField, 64, 0.01, 21)).unwrap();
        let text = cloud_to_csv(&cloud);
        let back = cloud_from_csv(&text).unwrap();
        assert_eq!(back, cloud);
        // Labels survive as exact integers.
        assert_eq!(back.labels(), cloud.labels());
    }

    #[test]
    fn csv_reports_malformed_rows_with_line_numbers() {
        let text = "x,y,z\n0,0,0\n1,2\n";
        match cloud_from_csv(text) {
            Err(CoreError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
        let text = "x,y\n0,0\n";
        assert!(cloud_from_csv(text).is_err());
        let text = "x,y,z,label\n0,0,0,not_a_label\n";
        match cloud_from_csv(text) {
            Err(CoreError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn dataset_splits_are_disjoint_and_cover_classes() {
        let ds = build_dataset(ShapeKind::PlaneWithBoxes, 128, 0.01, 42, 4, 2).unwrap();
        assert_eq!(ds.samples.len(), 6);
        assert_eq!(ds.num_classes, 3);
        for t in &ds.train {
            assert!(!ds.test.contains(t));
        }
        // Distinct samples from distinct per-sample streams.
        assert_ne!(ds.samples[0], ds.samples[1]);
    }

    #[test]
    fn ply_export_shape() {
        let dir = std::env::temp_dir().join("du_ply_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("field.ply");
        write_scalar_ply(
            &path,
            &[[0.0, 0.0, 0.0], [1.0, 0.5, 0.25]],
            "smoothness",
            &[0.5, 1.5],
        )
        .unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "ply");
        assert_eq!(lines[1], "format ascii 1.0");
        assert_eq!(lines[2], "element vertex 2");
        assert!(lines.contains(&"property float smoothness"));
        assert_eq!(lines[lines.len() - 1], "1 0.5 0.25 1.5");
        std::fs::remove_dir_all(&dir).ok();
    }
}

//! Benchmarks for the hot paths: neighbor search, farthest point sampling,
//! one diffusion-unit step, and a full forward/backward training step.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use du_core::data::{generate, ShapeKind, ShapeRecipe};
use du_core::diffcore::Tensor;
use du_core::du::{DuLayer, DuOptions};
use du_core::geom::{farthest_point_sample, knn_graph, PointCloud};
use du_core::net::{DecoderKind, DuNet, NetworkSpec};
use du_core::rng::Rng;
use du_core::{Graph, Mode, ParamStore};

fn random_cloud(n: usize, seed: u64) -> PointCloud {
    let mut rng = Rng::new(seed);
    PointCloud::new(
        (0..n)
            .map(|_| {
                [
                    rng.uniform(-1.0, 1.0),
                    rng.uniform(-1.0, 1.0),
                    rng.uniform(-1.0, 1.0),
                ]
            })
            .collect(),
    )
    .unwrap()
}

fn bench_knn(c: &mut Criterion) {
    let mut group = c.benchmark_group("knn");
    for &n in &[512usize, 2048] {
        let cloud = random_cloud(n, 7);
        group.bench_with_input(BenchmarkId::new("k16", n), &cloud, |b, cloud| {
            b.iter(|| knn_graph(cloud, 16, false).unwrap());
        });
    }
    group.finish();
}

fn bench_fps(c: &mut Criterion) {
    let mut group = c.benchmark_group("farthest_point_sample");
    for &n in &[512usize, 2048] {
        let cloud = random_cloud(n, 11);
        group.bench_with_input(BenchmarkId::new("quarter", n), &cloud, |b, cloud| {
            b.iter(|| farthest_point_sample(cloud, n / 4, 0).unwrap());
        });
    }
    group.finish();
}

fn bench_du_forward(c: &mut Criterion) {
    let n = 512;
    let d = 32;
    let cloud = random_cloud(n, 13);
    let nbr = knn_graph(&cloud, 16, false).unwrap();
    let mut store = ParamStore::new();
    let mut rng = Rng::new(5);
    let layer = DuLayer::new(&mut store, "du", d, DuOptions::default(), &mut rng).unwrap();
    let mut data_rng = Rng::new(17);
    let u0 = Tensor::from_vec(
        &[n, d],
        (0..n * d).map(|_| data_rng.uniform(-1.0, 1.0)).collect(),
    )
    .unwrap();
    c.bench_function("du_forward_512x32_k16", |b| {
        b.iter(|| {
            let mut graph = Graph::new();
            let u = graph.leaf(u0.clone()).unwrap();
            layer
                .forward(&mut graph, &mut store, u, &nbr, Mode::Eval)
                .unwrap()
        });
    });
}

fn bench_train_step(c: &mut Criterion) {
    let cloud = generate(&ShapeRecipe {
        kind: ShapeKind::TwoPartCylinder,
        n: 512,
        noise_sigma: 0.02,
        seed: 3,
    })
    .unwrap();
    let labels = cloud.labels().unwrap().to_vec();
    let spec = NetworkSpec::toy(512, 1, 2, DecoderKind::Du);
    let mut net = DuNet::new(spec, 9).unwrap();
    c.bench_function("train_step_512_toy", |b| {
        b.iter(|| {
            let mut graph = Graph::new();
            let (logits, _) = net.forward(&mut graph, &cloud, Mode::Train, None).unwrap();
            let loss = graph
                .cross_entropy_label_smoothing(logits, &labels, 0.2)
                .unwrap();
            graph.backward(loss).unwrap()
        });
    });
}

criterion_group!(benches, bench_knn, bench_fps, bench_du_forward, bench_train_step);
criterion_main!(benches);

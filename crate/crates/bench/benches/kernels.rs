use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use gspect_core::linalg::pseudoinverse;
use gspect_core::model::{GraphContext, ModelParams, TransformCache};
use gspect_core::spectral::{cosine_transform, normalized_laplacian, wavelet_basis};
use gspect_core::synth::gen_ba;
use gspect_core::train::graph_loss;
use gspect_core::{BasisMode, Graph, ModelConfig, Variant};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn graph(n: usize) -> Graph {
    gen_ba(n, 2, &mut ChaCha8Rng::seed_from_u64(n as u64)).expect("graph")
}

fn spectral(c: &mut Criterion) {
    let mut group = c.benchmark_group("spectral");
    for n in [32, 128, 512] {
        let l = normalized_laplacian(graph(n).adjacency()).expect("laplacian");
        group.bench_with_input(BenchmarkId::new("wavelet_basis", n), &l, |b, l| {
            b.iter(|| wavelet_basis(black_box(l), 1.0, 20, BasisMode::FittedKernel).expect("basis"))
        });
        group.bench_with_input(BenchmarkId::new("pseudoinverse_symmetric", n), &l, |b, l| {
            b.iter(|| pseudoinverse(black_box(l)).expect("pinv"))
        });
        group.bench_with_input(BenchmarkId::new("cosine_transform", n), &n, |b, &n| {
            b.iter(|| cosine_transform(black_box(n)).expect("dct"))
        });
    }
    group.finish();
}

fn passes(c: &mut Criterion) {
    let mut group = c.benchmark_group("model");
    group.sample_size(20);
    for variant in [Variant::Gspect, Variant::GcnDiffpool] {
        for n in [30, 200] {
            let g = graph(n);
            let config = ModelConfig {
                variant,
                n_max: 256,
                feature_dim: g.feature_dim(),
                class_count: 3,
                ..ModelConfig::default()
            };
            let params = ModelParams::init(&config, 1).expect("params");
            let ctx = GraphContext::build(&config, &g, &TransformCache::default()).expect("context");
            let id = format!("{}/{n}", variant.name());
            group.bench_function(BenchmarkId::new("forward", &id), |b| {
                b.iter(|| graph_loss(&config, &params, black_box(&g), &ctx, 0.1, false).expect("forward"))
            });
            group.bench_function(BenchmarkId::new("forward_backward", &id), |b| {
                b.iter(|| graph_loss(&config, &params, black_box(&g), &ctx, 0.1, true).expect("backward"))
            });
        }
    }
    group.finish();
}

criterion_group!(benches, spectral, passes);
criterion_main!(benches);

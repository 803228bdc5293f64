//! Kernel benchmarks. With the default `parallel` feature each kernel runs
//! under a 1-thread pool and under the default pool, so one run shows the
//! data-parallel speedup; built with --no-default-features the same targets
//! measure the true sequential code path.

use criterion::{criterion_group, criterion_main, Criterion};
use mlcs::consensus::{run_em, DecisionTensor, EmConfig};
use mlcs::diffusion::{diffuse_features, heat_coefficients, normalize_symmetric, HeatKernelConfig};
use mlcs::graph::{augment_adjacency, Query, SparseMatrix};
use mlcs::nn::{glorot_init, DenseMatrix};
use mlcs::search::{search_all_layers, ScoreConfig};
use mlcs::synth::{synthetic_decisions, synthetic_multilayer, SyntheticSpec};
use std::hint::black_box;

struct Fixtures {
    dense_a: DenseMatrix,
    dense_b: DenseMatrix,
    normalized: SparseMatrix,
    degrees: Vec<f64>,
    features: DenseMatrix,
    coeffs: Vec<f64>,
    decisions: DecisionTensor,
    graph: mlcs::graph::MultilayerGraph,
    reps: mlcs::encoder::LayerRepresentations,
    query: Query,
}

fn fixtures() -> Fixtures {
    let dense_a = glorot_init(256, 256, 1);
    let dense_b = glorot_init(256, 256, 2);

    let spec = SyntheticSpec {
        community_sizes: vec![500, 500, 500, 500],
        r_max: 2,
        p_in: 0.02,
        p_out: 0.002,
        layer_noise: 0.0,
        feature_buckets: 32,
        bump_scale: 1.0,
    };
    let (graph, _) = synthetic_multilayer(&spec, 3).unwrap();
    let a_hat = augment_adjacency(graph.layer(0).adjacency(), 1.0).unwrap();
    let normalized = normalize_symmetric(&a_hat).unwrap();
    let degrees = a_hat.row_sums();
    let features = graph.feature(0).clone();
    let coeffs = heat_coefficients(&HeatKernelConfig::default()).unwrap();

    let truth: Vec<usize> = (0..500).collect();
    let decisions = synthetic_decisions(&truth, 2000, &[0.1, 0.2, 0.3, 0.15, 0.25], 4).unwrap();

    let n = graph.n();
    let f_h = 64;
    let reps = mlcs::encoder::LayerRepresentations {
        c: (0..graph.r_max()).map(|r| glorot_init(n, f_h, 10 + r as u64)).collect(),
        p: (0..graph.r_max()).map(|r| glorot_init(n, f_h, 20 + r as u64)).collect(),
        u: glorot_init(n, f_h, 30),
        com_z: (0..graph.r_max()).map(|r| glorot_init(n, f_h, 40 + r as u64)).collect(),
    };
    let query = Query::new([7usize, 123, 301]).unwrap();

    Fixtures {
        dense_a,
        dense_b,
        normalized,
        degrees,
        features,
        coeffs,
        decisions,
        graph,
        reps,
        query,
    }
}

#[cfg(feature = "parallel")]
fn bench_kernel<F: Fn() + Sync>(c: &mut Criterion, name: &str, f: F) {
    let mut group = c.benchmark_group(name);
    group.sample_size(20);
    let single = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap();
    group.bench_function("1-thread", |b| b.iter(|| single.install(&f)));
    group.bench_function("default-pool", |b| b.iter(&f));
    group.finish();
}

#[cfg(not(feature = "parallel"))]
fn bench_kernel<F: Fn() + Sync>(c: &mut Criterion, name: &str, f: F) {
    let mut group = c.benchmark_group(name);
    group.sample_size(20);
    group.bench_function("sequential", |b| b.iter(&f));
    group.finish();
}

fn benchmarks(c: &mut Criterion) {
    let fx = fixtures();

    bench_kernel(c, "dense_matmul_256", || {
        black_box(fx.dense_a.matmul(&fx.dense_b).unwrap());
    });

    bench_kernel(c, "heat_diffusion_n2000", || {
        black_box(diffuse_features(&fx.normalized, &fx.features, &fx.degrees, &fx.coeffs).unwrap());
    });

    bench_kernel(c, "em_merge_n2000_r5", || {
        black_box(run_em(&fx.decisions, &EmConfig::default()).unwrap());
    });

    bench_kernel(c, "layer_search_n2000", || {
        black_box(
            search_all_layers(&fx.query, &fx.reps, &fx.graph, &ScoreConfig::default()).unwrap(),
        );
    });
}

criterion_group!(benches, benchmarks);
criterion_main!(benches);

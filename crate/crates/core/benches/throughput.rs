//! Sequential vs data-parallel throughput of the three parallel hot paths.
//! With the `parallel` feature each benchmark runs inside a one-thread pool
//! and inside the default pool; without it only the sequential path exists.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use ieqa_core::defvalue::{v_d_aggregate, LabeledSample};
use ieqa_core::scorer::{embed_prompt, ScorerDims, ScorerParams};
use ieqa_core::synth::{generate, labeled, GeneratorSpec};
use ieqa_core::trainer::{batch_gradient, LossKind, Objective};
use ieqa_core::{Dimension, ScoreRange};
use std::hint::black_box;

fn samples(n: usize) -> Vec<LabeledSample> {
    let spec = GeneratorSpec {
        n_train: n,
        n_val_in: 1,
        n_val_out: 1,
        ..Default::default()
    };
    labeled(
        &generate(&spec).unwrap().train,
        Dimension::Visual,
        ScoreRange::default(),
    )
    .unwrap()
}

#[cfg(feature = "parallel")]
fn modes() -> Vec<(&'static str, rayon::ThreadPool)> {
    let threads = rayon::current_num_threads();
    vec![
        (
            "sequential",
            rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap(),
        ),
        (
            "parallel",
            rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap(),
        ),
    ]
}

#[cfg(feature = "parallel")]
fn run<R>(pool: &rayon::ThreadPool, f: impl FnOnce() -> R + Send) -> R
where
    R: Send,
{
    pool.install(f)
}

#[cfg(not(feature = "parallel"))]
fn modes() -> Vec<(&'static str, ())> {
    vec![("sequential", ())]
}

#[cfg(not(feature = "parallel"))]
fn run<R>(_: &(), f: impl FnOnce() -> R) -> R {
    f()
}

fn bench(c: &mut Criterion) {
    let data = samples(512);
    let params = ScorerParams::init(ScorerDims::new(16), 0);
    let prompt = embed_prompt("Rate the visual quality of the edit.", params.dims.embed_dim);
    let batch: Vec<&LabeledSample> = data.iter().take(128).collect();
    let objective = Objective::new(LossKind::Tdrl, false);

    let mut group = c.benchmark_group("throughput");
    for (name, pool) in modes() {
        group.bench_function(BenchmarkId::new("batch_gradient_128", name), |b| {
            b.iter(|| {
                run(&pool, || {
                    black_box(batch_gradient(&params, &prompt, &batch, objective).unwrap())
                })
            })
        });
        group.bench_function(BenchmarkId::new("v_d_aggregate_512", name), |b| {
            b.iter(|| {
                run(&pool, || {
                    black_box(v_d_aggregate(&data, &params, "Judge sharpness.").unwrap())
                })
            })
        });
        let spec = GeneratorSpec::default();
        group.bench_function(BenchmarkId::new("generate_3000", name), |b| {
            b.iter(|| run(&pool, || black_box(generate(&spec).unwrap())))
        });
    }
    group.finish();
}

criterion_group!(benches, bench);
criterion_main!(benches);

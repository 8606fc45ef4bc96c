//! Thread-pool vs single-thread timings for the data-parallel hot paths.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use embgen::eval::{pairwise_within, PairCap};
use embgen::gmm::{fit_gmm, GmmConfig};
use embgen::hvae::{build_model, LatentHierarchySpec};
use embgen::sampler::{sample_normalized, SampleRequest};
use embgen::store::fit_normalizer;
use embgen::synth::{generate, SynthConfig};
use embgen::trainer::{train, TrainConfig};

fn pools() -> Vec<(&'static str, rayon::ThreadPool)> {
    let threads = std::thread::available_parallelism().map_or(4, |n| n.get());
    vec![
        ("sequential", rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap()),
        ("parallel", rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap()),
    ]
}

fn data(speakers: usize, per: usize, dim: usize) -> embgen::store::EmbeddingDataset {
    generate(&SynthConfig {
        speakers,
        utterances_per_speaker: per,
        dim,
        ..SynthConfig::default()
    })
    .unwrap()
    .0
}

fn bench(c: &mut Criterion) {
    let pools = pools();

    let set = data(50, 40, 192);
    let mut g = c.benchmark_group("pairwise_within_2000x192");
    for (name, pool) in &pools {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| pool.install(|| pairwise_within(black_box(&set), PairCap { max_pairs: None, seed: 0 }).unwrap()))
        });
    }
    g.finish();

    let set = data(16, 32, 32);
    let spec = LatentHierarchySpec::new(2, 2, 8, 64, 32);
    let cfg = TrainConfig {
        epochs: 1,
        batch_size: 512,
        ..TrainConfig::default()
    };
    let mut g = c.benchmark_group("train_epoch_512x32");
    g.sample_size(10);
    for (name, pool) in &pools {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| pool.install(|| train(build_model(&spec, 0).unwrap(), black_box(&set), &cfg).unwrap()))
        });
    }
    g.finish();

    let set = data(50, 100, 32);
    let gcfg = GmmConfig {
        k: 16,
        max_iters: 20,
        ..GmmConfig::default()
    };
    let mut g = c.benchmark_group("gmm_fit_5000x32_k16");
    g.sample_size(10);
    for (name, pool) in &pools {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| pool.install(|| fit_gmm(black_box(&set), &gcfg).unwrap()))
        });
    }
    g.finish();

    let mut model = build_model(&LatentHierarchySpec::new(2, 5, 20, 64, 32), 0).unwrap();
    model.set_norm_stats(fit_normalizer(&set).unwrap()).unwrap();
    let req = SampleRequest::new(2000, 0);
    let mut g = c.benchmark_group("sample_2000");
    g.sample_size(10);
    for (name, pool) in &pools {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| pool.install(|| sample_normalized(black_box(&model), &req).unwrap()))
        });
    }
    g.finish();
}

criterion_group!(benches, bench);
criterion_main!(benches);

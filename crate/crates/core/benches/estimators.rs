use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use kr_core::estimators::{ergodic_estimator, finite_time_estimator, ErgodicConfig, FiniteTimeConfig};
use kr_core::models::{build_network, build_tent, NetworkForm, NoiseMode, TentMap, LAYERS};
use kr_core::oracle::stationary_density;
use kr_core::Execution;

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn finite_network(c: &mut Criterion) {
    let m = build_network(0.0, 1.5, NoiseMode::Foliated, NetworkForm::Chart).unwrap();
    let mut group = c.benchmark_group("finite_network_2000_paths");
    group.sample_size(20);
    for (name, execution) in MODES {
        let mut cfg = FiniteTimeConfig::new(LAYERS, 2000, 0.0, 1);
        cfg.execution = execution;
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| {
                finite_time_estimator(&m.system, &m.noise, m.observable.as_ref(), m.initial.as_ref(), black_box(&cfg))
                    .unwrap()
            })
        });
    }
    group.finish();
}

fn ergodic_tent(c: &mut Criterion) {
    let m = build_tent(3.0, 0.1).unwrap();
    let mut group = c.benchmark_group("ergodic_tent_200k_8_segments");
    group.sample_size(20);
    for (name, execution) in MODES {
        let mut cfg = ErgodicConfig::new(7, 200_000, 3.0, 2);
        cfg.segments = 8;
        cfg.execution = execution;
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| ergodic_estimator(&m.system, &m.noise, m.observable.as_ref(), black_box(&cfg)).unwrap())
        });
    }
    group.finish();
}

fn grid_oracle(c: &mut Criterion) {
    let tent = |x: f64| TentMap::apply(3.0, x);
    c.bench_function("grid_stationary_tent_1024", |b| {
        b.iter(|| stationary_density(&tent, black_box(0.1), 1024, 1e-10).unwrap())
    });
}

criterion_group!(benches, finite_network, ergodic_tent, grid_oracle);
criterion_main!(benches);

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use decsgd::{CompressorSpec, Method, MixingMatrix, TopologyKind};
use decsgd::nalgebra::DVector;
use decsgd_bench::quadratic_engine;

fn bench_topology(c: &mut Criterion) {
    let mut group = c.benchmark_group("topology");
    for k in [8usize, 64] {
        group.bench_with_input(BenchmarkId::new("build_ring", k), &k, |b, &k| {
            b.iter(|| MixingMatrix::build(TopologyKind::Ring, black_box(k)).unwrap())
        });
    }
    group.finish();
}

fn bench_compression(c: &mut Criterion) {
    let mut group = c.benchmark_group("compression");
    let d = 4096;
    let x = DVector::from_fn(d, |i, _| ((i * 2654435761) % 1000) as f64 / 500.0 - 1.0);
    for (name, spec) in [
        ("scaled_sign", CompressorSpec::scaled_sign()),
        ("top_k_128", CompressorSpec::top_k(128)),
        ("identity", CompressorSpec::identity()),
    ] {
        group.bench_function(name, |b| b.iter(|| spec.compress(black_box(&x), None).unwrap()));
    }
    group.finish();
}

fn bench_engine_step(c: &mut Criterion) {
    let mut group = c.benchmark_group("engine_step");
    for (name, method, period) in [
        ("pd_sgdm_p4", Method::PdSgdm, 4),
        ("cpd_sgdm_p4", Method::CpdSgdm, 4),
        ("c_sgdm", Method::CSgdm, 1),
    ] {
        group.bench_function(name, |b| {
            let mut engine = quadratic_engine(method, 50, 8, period);
            b.iter(|| engine.step().unwrap());
        });
    }
    group.finish();
}

criterion_group!(benches, bench_topology, bench_compression, bench_engine_step);
criterion_main!(benches);

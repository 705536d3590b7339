use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use otmatch_bench::{cost_matrix, embeddings};
use otmatch_core::ot_matcher::{
    chamfer_similarity, emd_gradient, emd_similarity, exact_emd_oracle, sinkhorn, uniform_marginals, PlanGradient,
    SinkhornConfig,
};

fn bench_sinkhorn(c: &mut Criterion) {
    let mut group = c.benchmark_group("sinkhorn");
    let cfg = SinkhornConfig::default();
    for &(n, m) in &[(4, 8), (8, 16), (16, 32)] {
        let cost = cost_matrix(n, m, 1);
        let (u, v) = uniform_marginals(n, m);
        group.bench_with_input(BenchmarkId::from_parameter(format!("{n}x{m}")), &cost, |b, cost| {
            b.iter(|| sinkhorn(black_box(cost), &u, &v, &cfg).unwrap())
        });
    }
    group.finish();
}

fn bench_oracle(c: &mut Criterion) {
    let mut group = c.benchmark_group("exact_oracle");
    for &(n, m) in &[(2, 3), (3, 4), (4, 6), (5, 5)] {
        let cost = cost_matrix(n, m, 2);
        let (u, v) = uniform_marginals(n, m);
        group.bench_with_input(BenchmarkId::from_parameter(format!("{n}x{m}")), &cost, |b, cost| {
            b.iter(|| exact_emd_oracle(black_box(cost), &u, &v).unwrap())
        });
    }
    group.finish();
}

fn bench_similarity(c: &mut Criterion) {
    let cfg = SinkhornConfig::default();
    let (parts, words) = embeddings(4, 10, 64, 3);
    c.bench_function("emd_similarity/4x10x64", |b| {
        b.iter(|| emd_similarity(black_box(&parts), black_box(&words), &cfg).unwrap())
    });
    c.bench_function("chamfer_similarity/4x10x64", |b| {
        b.iter(|| chamfer_similarity(black_box(&parts), black_box(&words)).unwrap())
    });
    for mode in [PlanGradient::Implicit, PlanGradient::Envelope] {
        c.bench_function(&format!("emd_gradient/{mode:?}/4x10x64"), |b| {
            b.iter(|| emd_gradient(black_box(&parts), black_box(&words), &cfg, 1.0, mode).unwrap())
        });
    }
}

criterion_group!(benches, bench_sinkhorn, bench_oracle, bench_similarity);
criterion_main!(benches);

use bvfield::assemble;
use bvfield::gaussian::{condition_precision, sample_prior};
use bvfield::inference::loglik_precision;
use bvfield_bench::Instance;
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

fn sizes() -> Vec<(&'static str, Instance)> {
    vec![
        ("interval-2000", Instance::interval(2000).unwrap()),
        ("grid-80x40", Instance::grid(80).unwrap()),
    ]
}

fn assembly(c: &mut Criterion) {
    let mut g = c.benchmark_group("assemble");
    for (name, inst) in sizes() {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| assemble(black_box(&inst.mesh), black_box(&inst.spec)).unwrap())
        });
    }
    g.finish();
}

fn factor(c: &mut Criterion) {
    let mut g = c.benchmark_group("factor");
    for (name, inst) in sizes() {
        g.bench_function(BenchmarkId::from_parameter(name), |b| b.iter(|| inst.precision.factor().unwrap()));
    }
    g.finish();
}

fn sampling(c: &mut Criterion) {
    let mut g = c.benchmark_group("sample-100");
    for (name, inst) in sizes() {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| sample_prior(&inst.precision, 100, black_box(7)).unwrap())
        });
    }
    g.finish();
}

fn kriging(c: &mut Criterion) {
    let mut g = c.benchmark_group("krige-50");
    for (name, inst) in sizes() {
        let obs = inst.observations(50).unwrap();
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| condition_precision(&inst.precision, black_box(&obs)).unwrap())
        });
    }
    g.finish();
}

fn likelihood(c: &mut Criterion) {
    let mut g = c.benchmark_group("loglik-50");
    for (name, inst) in sizes() {
        let obs = inst.observations(50).unwrap();
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| loglik_precision(&inst.precision, black_box(&obs)).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, assembly, factor, sampling, kriging, likelihood);
criterion_main!(benches);

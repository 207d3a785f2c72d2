use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use qillum::chernoff::{q_s_general, q_s_tmsv};
use qillum::probe::{optimize_single, optimize_two};
use qillum::target::rho_pair_tmsv_closed;
use qillum::{chernoff_coherent, chernoff_tmsv, OptimizerOptions, TargetParams};

fn bounds(c: &mut Criterion) {
    let p = TargetParams::new(0.3, 0.01, 2.0).unwrap();
    c.bench_function("chernoff_coherent", |b| {
        b.iter(|| chernoff_coherent(black_box(&p), 0.5).unwrap())
    });
    c.bench_function("chernoff_tmsv", |b| {
        b.iter(|| chernoff_tmsv(black_box(&p), 0.5).unwrap())
    });
    c.bench_function("q_s_tmsv closed form", |b| {
        b.iter(|| q_s_tmsv(black_box(0.4), &p, 0.5).unwrap())
    });
    let h = rho_pair_tmsv_closed(&p, 0.5).unwrap();
    c.bench_function("q_s general two-mode", |b| {
        b.iter(|| q_s_general(black_box(0.4), &h.rho0, &h.rho1).unwrap())
    });
}

fn optimizer(c: &mut Criterion) {
    let opts = OptimizerOptions::default();
    let mut g = c.benchmark_group("optimizer");
    g.sample_size(10);
    g.bench_function("single ns=0.5", |b| {
        b.iter(|| optimize_single(black_box(0.5), 40, &opts).unwrap())
    });
    g.bench_function("two ns=1", |b| {
        b.iter(|| optimize_two(black_box(1.0), 2.0, 60, &opts).unwrap())
    });
    g.finish();
}

criterion_group!(benches, bounds, optimizer);
criterion_main!(benches);

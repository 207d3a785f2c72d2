use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use qillum::fock::{default_cutoffs, fock_hypotheses, FockOverlap, TRACE_TOL};
use qillum::{oracle_bound, Probe, TargetParams};

fn oracle(c: &mut Criterion) {
    let p = TargetParams::new(0.3, 0.05, 1.0).unwrap();
    let mut g = c.benchmark_group("fock");
    g.sample_size(10);
    for probe in [Probe::Coherent { ns: 0.5 }, Probe::Tmsv { ns: 0.5 }] {
        let cut = default_cutoffs(&p, &probe);
        g.bench_function(format!("hypotheses {}", probe.name()), |b| {
            b.iter(|| fock_hypotheses(black_box(&p), &probe, &cut, TRACE_TOL).unwrap())
        });
        let h = fock_hypotheses(&p, &probe, &cut, TRACE_TOL).unwrap();
        g.bench_function(format!("spectra {}", probe.name()), |b| {
            b.iter(|| FockOverlap::new(black_box(&h.rho0), &h.rho1).unwrap())
        });
        g.bench_function(format!("oracle bound {}", probe.name()), |b| {
            b.iter(|| oracle_bound(black_box(&p), &probe, &cut).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, oracle);
criterion_main!(benches);

use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

use slowfast::continuation::{trace_branch, ContinuationConfig};
use slowfast::equilibrium::{find_equilibrium, DEFAULT_TOL};
use slowfast::integrate::{integrate, IntegratorConfig};
use slowfast::oscillation::{scan_parameter, ScanOptions};
use slowfast::studies::study;
use slowfast::ModelId;

fn integration(c: &mut Criterion) {
    let cfg = IntegratorConfig::default();
    let mut g = c.benchmark_group("integrate");
    for (model, value) in [(ModelId::Gause, 0.05), (ModelId::Enso, 0.05), (ModelId::Goodwin, 10.0)] {
        let s = study(model);
        let p = s.params().with_bif_value(value);
        g.bench_function(model.as_str(), |b| {
            b.iter(|| integrate(black_box(&p), s.x0, (0.0, 200.0), &cfg).unwrap())
        });
    }
    g.finish();
}

fn continuation(c: &mut Criterion) {
    let s = study(ModelId::Gause);
    let p = s.params().with_bif_value(0.3);
    let start = find_equilibrium(&p, &[2.0, 10.0], DEFAULT_TOL).unwrap();
    let cfg = ContinuationConfig::default();
    c.bench_function("trace_branch/gause", |b| {
        b.iter(|| trace_branch(black_box(&p), "eps", s.range, &start, &cfg).unwrap())
    });
}

fn scan(c: &mut Criterion) {
    let s = study(ModelId::Fear);
    let grid = [0.05, 0.15, 0.25, 0.35];
    let opts = ScanOptions::with_observable(s.observable);
    let mut g = c.benchmark_group("scan");
    g.sample_size(10);
    g.bench_function("fear", |b| {
        b.iter(|| scan_parameter(&s.params(), s.bif_param, black_box(&grid), s.x0, &opts).unwrap())
    });
    g.finish();
}

criterion_group!(benches, integration, continuation, scan);
criterion_main!(benches);

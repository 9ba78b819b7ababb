//! Sweep throughput: the thread fan-out against the sequential path on the
//! same seed batch, per ring variant. Run with `--no-default-features` to
//! measure the build where `run_sweep` itself is the sequential path.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use safering::{run_sweep, run_sweep_sequential, SweepSpec, Variant};
use std::hint::black_box;

fn spec(variant: Variant, n: u16) -> SweepSpec {
    let mut spec = SweepSpec::new(variant, n, 8);
    if variant == Variant::Gray {
        spec.token_domain = Some(8);
    }
    spec.budget = 30_000;
    spec
}

fn sweep_benches(c: &mut Criterion) {
    let mut group = c.benchmark_group("sweep");
    group.sample_size(10);
    for (name, variant, n) in [
        ("atomic", Variant::Atomic, 3),
        ("two-reg", Variant::TwoReg, 2),
        ("gray", Variant::Gray, 2),
    ] {
        let spec = spec(variant, n);
        group.bench_with_input(BenchmarkId::new("parallel", name), &spec, |b, spec| {
            b.iter(|| run_sweep(black_box(spec)).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("sequential", name), &spec, |b, spec| {
            b.iter(|| run_sweep_sequential(black_box(spec)).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, sweep_benches);
criterion_main!(benches);

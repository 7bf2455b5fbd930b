use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use ldrisk::legendre::conjugate;
use ldrisk::{sample_tilted, ExactConfig, ExactOracle, MixtureCgf, TailKind};
use ldrisk_bench::{blocks, mixed, round_robin};

fn legendre(c: &mut Criterion) {
    let cgf = MixtureCgf::limit(&mixed()).unwrap();
    let mut group = c.benchmark_group("legendre");
    for x in [0.1, 1.0, 2.0] {
        group.bench_with_input(BenchmarkId::new("conjugate", x), &x, |b, &x| {
            b.iter(|| conjugate(black_box(&cgf), black_box(x)).unwrap())
        });
    }
    group.bench_function("cgf_eval", |b| b.iter(|| cgf.eval(black_box(0.7))));
    group.finish();
}

fn exact(c: &mut Criterion) {
    let mut group = c.benchmark_group("exact");
    group.sample_size(20);
    let rr = ExactOracle::new(round_robin(), ExactConfig::default()).unwrap();
    let mix = ExactOracle::new(mixed(), ExactConfig::default()).unwrap();
    for n in [100u64, 1_000, 10_000] {
        group.throughput(Throughput::Elements(n));
        group.bench_with_input(BenchmarkId::new("round_robin", n), &n, |b, &n| {
            b.iter(|| rr.upper_tail(n, 0.5, TailKind::AtLeast).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("mixed", n), &n, |b, &n| {
            b.iter(|| mix.upper_tail(n, 0.5, TailKind::AtLeast).unwrap())
        });
    }
    let schedule = ExactOracle::new(blocks(10), ExactConfig::default()).unwrap();
    group.bench_function("blocks_111111", |b| {
        b.iter(|| schedule.log_tail_rate(111_111, 0.5).unwrap())
    });
    group.finish();
}

fn tilted_mc(c: &mut Criterion) {
    let model = round_robin();
    let mut group = c.benchmark_group("tilted_mc");
    group.sample_size(10);
    for n in [100u64, 1_000] {
        let samples = 10_000;
        group.throughput(Throughput::Elements(samples * n));
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, &n| {
            b.iter(|| sample_tilted(&model, n, 0.5, samples, 7).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, legendre, exact, tilted_mc);
criterion_main!(benches);

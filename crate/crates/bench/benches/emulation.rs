use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use histmatch_bench::{sirs_emulators, sirs_outputs, sirs_points, sirs_training};
use histmatch_core::proposal::{generate_new_design, ProposalOptions};
use histmatch_core::sims::{sirs_deterministic, sirs_space, sirs_targets, SirsParams};
use histmatch_core::{emulator_from_data, TrainingOptions};
use std::hint::black_box;

fn prediction(c: &mut Criterion) {
    let set = sirs_emulators(0);
    let em = set.get("nI").unwrap().clone();
    let mut g = c.benchmark_group("predict");
    for n in [1usize, 1000, 10_000] {
        let pts = sirs_points(n, 1);
        g.throughput(Throughput::Elements(n as u64));
        g.bench_with_input(BenchmarkId::new("nI", n), &pts, |b, pts| b.iter(|| em.predict(black_box(pts)).unwrap()));
    }
    g.finish();
    let pts = sirs_points(10_000, 2);
    let targets = sirs_targets();
    c.bench_function("nth_implausibility/10000", |b| {
        b.iter(|| set.nth_implausibility(black_box(&pts), &targets, 1).unwrap())
    });
}

fn simulator(c: &mut Criterion) {
    let p = SirsParams::new(0.4, 0.2, 0.02).unwrap();
    c.bench_function("sirs_ode", |b| b.iter(|| sirs_deterministic(black_box(&p))));
}

fn training(c: &mut Criterion) {
    let runs = sirs_training(0);
    let mut g = c.benchmark_group("train");
    g.sample_size(10);
    g.bench_function("sirs_wave1", |b| {
        b.iter(|| emulator_from_data(black_box(&runs), &sirs_outputs(), &sirs_space(), &TrainingOptions::default()).unwrap())
    });
    g.finish();
}

fn proposal(c: &mut Criterion) {
    let set = sirs_emulators(0);
    let targets = sirs_targets();
    let mut g = c.benchmark_group("propose");
    g.sample_size(10);
    g.bench_function("sirs_wave1/90", |b| {
        b.iter(|| generate_new_design(std::slice::from_ref(&set), 90, &targets, &ProposalOptions::default()).unwrap())
    });
    g.finish();
}

criterion_group!(benches, prediction, simulator, training, proposal);
criterion_main!(benches);

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use delta_bench::Fixture;
use delta_core::harness::{run_continual_learning, Method};
use delta_core::protocol::{DirectoryDownload, Message};
use delta_core::{build_directory, build_plan, compute_context_weights, decode, draw_samples, encode, MatchConfig};

fn directory(c: &mut Criterion) {
    let f = Fixture::new(0);
    c.bench_function("build_directory", |b| {
        b.iter(|| build_directory(black_box(&f.scenario.cloud), f.config.run.clusters_per_label, 0).unwrap())
    });
}

fn matching(c: &mut Criterion) {
    let f = Fixture::new(0);
    let cfg = MatchConfig::default();
    c.bench_function("context_weights", |b| {
        b.iter(|| compute_context_weights(1, black_box(&f.scenario.device[0]), &f.directory, &f.model, &cfg).unwrap())
    });
}

fn sampling(c: &mut Criterion) {
    let f = Fixture::new(0);
    let cfg = &f.config.run.sampling;
    c.bench_function("build_plan", |b| {
        b.iter(|| {
            build_plan(
                1,
                black_box(&f.weights),
                &f.directory,
                &f.assignment,
                &f.scenario.cloud,
                None,
                cfg,
            )
            .unwrap()
        })
    });
    let plan = build_plan(1, &f.weights, &f.directory, &f.assignment, &f.scenario.cloud, None, cfg).unwrap();
    c.bench_function("draw_samples", |b| {
        b.iter(|| draw_samples(black_box(&plan), &f.scenario.cloud, 7, cfg.replacement).unwrap())
    });
}

fn protocol(c: &mut Criterion) {
    let f = Fixture::new(0);
    let msg = Message::DirectoryDownload(DirectoryDownload::from_directory(&f.directory, 1));
    let bytes = encode(&msg);
    c.bench_function("encode_directory", |b| b.iter(|| encode(black_box(&msg))));
    c.bench_function("decode_directory", |b| b.iter(|| decode(black_box(&bytes)).unwrap()));
}

fn end_to_end(c: &mut Criterion) {
    let f = Fixture::new(0);
    let mut g = c.benchmark_group("run");
    g.sample_size(10);
    for method in Method::ALL {
        g.bench_function(method.as_str(), |b| {
            b.iter(|| run_continual_learning(&f.scenario, method, &f.config.run).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, directory, matching, sampling, protocol, end_to_end);
criterion_main!(benches);

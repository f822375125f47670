use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use sparsefed_bench::{mask, network};
use sparsefed_core::cost::{forward_flops, model_storage};
use std::hint::black_box;

fn bench_storage(c: &mut Criterion) {
    let net = network(&[256, 256, 256]);
    let mut g = c.benchmark_group("model_storage");
    for d in [0.01, 0.05, 0.2, 0.5] {
        let m = mask(&net, d);
        g.bench_with_input(BenchmarkId::from_parameter(d), &m, |b, m| {
            b.iter(|| model_storage(black_box(&net), Some(m), 32).unwrap())
        });
    }
    g.finish();
    let m = mask(&net, 0.05);
    c.bench_function("forward_flops", |b| b.iter(|| forward_flops(black_box(&net), Some(&m), 64)));
}

criterion_group!(benches, bench_storage);
criterion_main!(benches);

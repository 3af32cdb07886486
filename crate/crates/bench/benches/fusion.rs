use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use panodense_bench::{latents, stripe_masks};
use panodense_core::fusion::merge_paths;
use panodense_core::Shape;
use std::hint::black_box;

fn merge(c: &mut Criterion) {
    let mut g = c.benchmark_group("merge_paths");
    for width in [128, 256] {
        let shape = Shape::new(4, width / 2, width);
        let lat = latents(shape, 4);
        let masks = stripe_masks(width, width / 2, 3);
        g.bench_with_input(BenchmarkId::from_parameter(width), &width, |b, _| {
            b.iter(|| merge_paths(black_box(&lat), &masks).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, merge);
criterion_main!(benches);

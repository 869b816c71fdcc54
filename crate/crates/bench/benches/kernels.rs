use std::collections::BTreeSet;

use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use spanwise_bench::{attention, bipartite, logits};
use spanwise_core::interactions::louvain;
use spanwise_core::steering::{steer_matrix, TargetIndexSet};
use spanwise_core::uncertainty::{label_distribution, predictive_entropy};

fn bench_louvain(c: &mut Criterion) {
    let mut group = c.benchmark_group("louvain");
    for side in [16, 64, 128] {
        let g = bipartite(side, side, 0.2, 7);
        group.bench_with_input(BenchmarkId::from_parameter(side * 2), &g, |b, g| {
            b.iter(|| louvain(black_box(g), 1.0, 0))
        });
    }
    group.finish();
}

fn bench_steering(c: &mut Criterion) {
    let mut group = c.benchmark_group("steer_matrix");
    for n in [64, 256, 512] {
        let a = attention(n, 3);
        let targets = TargetIndexSet {
            indices: (0..n).step_by(9).collect::<BTreeSet<_>>(),
        };
        group.bench_with_input(BenchmarkId::from_parameter(n), &a, |b, a| {
            b.iter(|| steer_matrix(black_box(a), &targets, 0.01).expect("valid beta"))
        });
    }
    group.finish();
}

fn bench_entropy(c: &mut Criterion) {
    let all = logits(1000, 5);
    c.bench_function("entropy/1000", |b| {
        b.iter(|| {
            all.iter()
                .map(|l| predictive_entropy(&label_distribution(black_box(l)).expect("finite logits")).value())
                .sum::<f64>()
        })
    });
}

criterion_group!(benches, bench_louvain, bench_steering, bench_entropy);
criterion_main!(benches);

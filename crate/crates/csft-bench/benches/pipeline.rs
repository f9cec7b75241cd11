use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use csft::hash2bins::hash_to_bins;
use csft::numerics::{dft_multi, C64};
use csft::rangetree::RangeTree;
use csft_bench::{fixture, random_points};

fn bench_hash_to_bins(c: &mut Criterion) {
    let mut group = c.benchmark_group("hash_to_bins");
    for (d, b) in [(1, 8), (2, 4), (2, 8)] {
        let fx = fixture(4, d, b, 1);
        group.bench_with_input(BenchmarkId::from_parameter(format!("d{d}_B{b}")), &fx, |bench, fx| {
            bench.iter(|| hash_to_bins(&fx.oracle, &fx.hash, black_box(&fx.shift), &fx.filter).unwrap())
        });
    }
    group.finish();
}

fn bench_dft(c: &mut Criterion) {
    let mut group = c.benchmark_group("dft_multi");
    for (b, d) in [(64usize, 1usize), (16, 2), (8, 3)] {
        let data: Vec<C64> = (0..b.pow(d as u32)).map(|i| C64::new(i as f64, -(i as f64))).collect();
        group.bench_function(format!("B{b}_d{d}"), |bench| {
            bench.iter_batched_ref(|| data.clone(), |u| dft_multi(u, b, d), criterion::BatchSize::SmallInput)
        });
    }
    group.finish();
}

fn bench_range_tree(c: &mut Criterion) {
    let mut group = c.benchmark_group("range_tree");
    for d in [2, 3] {
        let points = random_points(10_000, d, 7);
        let tree = RangeTree::build(d, points).unwrap();
        let (lo, hi) = (vec![0.25; d], vec![0.6; d]);
        group.bench_function(format!("count_d{d}"), |bench| bench.iter(|| tree.count(black_box(&lo), black_box(&hi))));
        group.bench_function(format!("build_d{d}"), |bench| {
            bench.iter(|| RangeTree::build(d, random_points(2_000, d, 8)).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, bench_hash_to_bins, bench_dft, bench_range_tree);
criterion_main!(benches);

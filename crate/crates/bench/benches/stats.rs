use criterion::{criterion_group, criterion_main, Criterion};
use invariaudit_bench::{shift_groups, shifts};
use invariaudit_core::rrf::{gap_sweep, RrfParams};
use invariaudit_core::stats::{bca_ci, median, shapiro_wilk, wilcoxon_signed_rank};
use std::hint::black_box;

fn stats(c: &mut Criterion) {
    let x = shifts(200, 5.0, 1);
    c.bench_function("bca_median_200x10k", |b| b.iter(|| bca_ci(black_box(&x), &median, 10_000, 2025, 0.95)));
    let small = shifts(25, 0.5, 2);
    c.bench_function("wilcoxon_exact_25", |b| b.iter(|| wilcoxon_signed_rank(black_box(&small))));
    c.bench_function("shapiro_wilk_200", |b| b.iter(|| shapiro_wilk(black_box(&x))));
    let groups = shift_groups(500, 4, 3);
    let params = RrfParams::default();
    let mut g = c.benchmark_group("rrf");
    g.sample_size(10);
    g.bench_function("gap_sweep_500x4", |b| b.iter(|| gap_sweep("s", "f", black_box(&groups), 1.0, &params)));
    g.finish();
}

criterion_group!(benches, stats);
criterion_main!(benches);

//! Criterion benches for the hot paths. Run with the default features for
//! the rayon-parallel core and with `--no-default-features` for the
//! sequential fallback; the results are directly comparable because the
//! reductions are bit-identical.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use num_complex::Complex64;

use lve::engine::{pressure_series, EngineOptions};
use lve::interp::{build_covariance, gaussian_expectation, FieldLayout, QuadratureSpec};
use lve::model::ModelSpec;
use lve::trees::{enumerate_trees, tree_by_index, tree_count};

fn bench_pressure(c: &mut Criterion) {
    let mut group = c.benchmark_group("pressure");
    group.sample_size(10);
    for &nmax in &[3usize, 5] {
        let opts = EngineOptions {
            qmc_points: 1024,
            ..EngineOptions::default()
        };
        let model = ModelSpec::zero_dim(Complex64::new(0.05, 0.0));
        group.bench_with_input(BenchmarkId::new("zero-d", nmax), &nmax, |b, &nmax| {
            b.iter(|| pressure_series(&model, nmax, &opts).unwrap())
        });
    }
    group.finish();
}

fn bench_tree_enumeration(c: &mut Criterion) {
    let mut group = c.benchmark_group("trees");
    for &n in &[6usize, 8] {
        group.bench_with_input(BenchmarkId::new("enumerate", n), &n, |b, &n| {
            b.iter(|| enumerate_trees(n).unwrap().count())
        });
    }
    group.finish();
}

fn bench_gaussian_expectation(c: &mut Criterion) {
    let mut group = c.benchmark_group("gaussian-expectation");
    group.sample_size(20);
    let n = 5;
    let tree = tree_by_index(n, 12345 % tree_count(n));
    let w = vec![0.5; n - 1];
    let cov = build_covariance(&tree, &w).unwrap();
    for &samples in &[4096usize, 16384] {
        group.bench_with_input(BenchmarkId::new("qmc", samples), &samples, |b, &s| {
            b.iter(|| {
                gaussian_expectation(
                    &cov,
                    FieldLayout::scalar(),
                    &QuadratureSpec::qmc(s, 7),
                    |f| {
                        let mut acc = Complex64::new(0.0, 0.0);
                        for v in 0..n {
                            acc += Complex64::new(0.0, f[(v, 0)]).exp();
                        }
                        acc
                    },
                )
                .unwrap()
            })
        });
    }
    group.finish();
}

criterion_group!(
    benches,
    bench_pressure,
    bench_tree_enumeration,
    bench_gaussian_expectation
);
criterion_main!(benches);

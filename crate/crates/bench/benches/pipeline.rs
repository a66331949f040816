use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use h2direct::factor::factorize;
use h2direct::fixtures::Family;
use h2direct::h2::build_h2;
use h2direct::kernel::KernelSpec;
use h2direct::solve::solve_in_place;
use h2direct_bench::{factored, matrix, options, partition, EPS_H2, SIZES};

fn build(c: &mut Criterion) {
    let mut g = c.benchmark_group("build");
    g.sample_size(10);
    for n in SIZES {
        let (tree, blocks) = partition(Family::Rod, n);
        g.throughput(Throughput::Elements(n as u64));
        g.bench_with_input(BenchmarkId::new("rod", n), &n, |b, _| {
            b.iter(|| build_h2(&KernelSpec::laplace(), &tree, &blocks, EPS_H2).unwrap())
        });
    }
    g.finish();
}

fn factor(c: &mut Criterion) {
    let mut g = c.benchmark_group("factor");
    g.sample_size(10);
    for n in SIZES {
        let a = matrix(Family::Rod, n);
        let opts = options();
        g.throughput(Throughput::Elements(n as u64));
        g.bench_with_input(BenchmarkId::new("rod", n), &n, |b, _| {
            b.iter(|| factorize(black_box(&a), &opts).unwrap())
        });
    }
    g.finish();
}

fn solve(c: &mut Criterion) {
    let mut g = c.benchmark_group("solve");
    for n in SIZES {
        let (chain, rhs) = factored(Family::Rod, n);
        let mut x = rhs.clone();
        g.throughput(Throughput::Elements(n as u64));
        g.bench_with_input(BenchmarkId::new("rod", n), &n, |b, _| {
            b.iter(|| {
                x.copy_from(&rhs);
                solve_in_place(&chain, black_box(x.as_mut_slice())).unwrap();
            })
        });
    }
    g.finish();
}

criterion_group!(benches, build, factor, solve);
criterion_main!(benches);

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use mscat::linalg::{herm_eig, herm_eigvals, solve};
use mscat::{Complex64, ComplexMatrix};
use mscat_bench::hermitian;

fn eigensolver(c: &mut Criterion) {
    let mut g = c.benchmark_group("herm_eig");
    for n in [16, 48, 96] {
        let a = hermitian(n);
        g.bench_with_input(BenchmarkId::new("vectors", n), &a, |b, a| b.iter(|| herm_eig(a).unwrap()));
        g.bench_with_input(BenchmarkId::new("values", n), &a, |b, a| b.iter(|| herm_eigvals(a).unwrap()));
    }
    g.finish();
}

fn lu_solve(c: &mut Criterion) {
    let mut g = c.benchmark_group("solve");
    for n in [16, 48, 96] {
        let a = hermitian(n).shift_diag(Complex64::new(0.3, 1.0));
        let rhs = ComplexMatrix::identity(n);
        g.bench_with_input(BenchmarkId::from_parameter(n), &a, |b, a| b.iter(|| solve(a, &rhs).unwrap()));
    }
    g.finish();
}

criterion_group!(benches, eigensolver, lu_solve);
criterion_main!(benches);

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use mscat::resolvent::{boundary_value_ctx, sandwiched_resolvent_ctx};
use mscat::{Complex64, LimitOptions, ResolventContext, Side};
use mscat_bench::system;

fn sandwiched(c: &mut Criterion) {
    let mut g = c.benchmark_group("sandwiched_resolvent");
    for n in [12, 24] {
        let sys = system(n, 2);
        let ctx = ResolventContext::new(&sys).unwrap();
        let z = Complex64::new(1.5, 0.01);
        g.bench_function(BenchmarkId::from_parameter(n), |b| b.iter(|| sandwiched_resolvent_ctx(&ctx, z).unwrap()));
    }
    g.finish();
}

fn boundary(c: &mut Criterion) {
    let sys = system(12, 2);
    let ctx = ResolventContext::new(&sys).unwrap();
    let opts = LimitOptions::default();
    c.bench_function("boundary_value/12", |b| b.iter(|| boundary_value_ctx(&ctx, 1.5, Side::Plus, &opts).unwrap()));
}

criterion_group!(benches, sandwiched, boundary);
criterion_main!(benches);

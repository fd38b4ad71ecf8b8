use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use depolar_bench::instance;
use depolar_core::baselines::plan_bomp;
use depolar_core::dynamics::{solve_fj_direct, solve_fj_iterative};
use depolar_core::PlanningContext;
use std::hint::black_box;

fn steady_state(c: &mut Criterion) {
    let mut group = c.benchmark_group("steady_state");
    group.sample_size(10);
    for n in [200, 2_000, 20_000] {
        let inst = instance(n, 1, 1);
        group.bench_with_input(BenchmarkId::new("direct", n), &inst, |b, inst| {
            b.iter(|| solve_fj_direct(&inst.graph, black_box(&inst.s0)).unwrap())
        });
        if n <= 2_000 {
            group.bench_with_input(BenchmarkId::new("jacobi", n), &inst, |b, inst| {
                b.iter(|| solve_fj_iterative(&inst.graph, black_box(&inst.s0), 1e-10, 1_000_000).unwrap())
            });
        }
    }
    group.finish();
}

fn bomp(c: &mut Criterion) {
    let mut group = c.benchmark_group("bomp");
    group.sample_size(10);
    for n in [100, 1_000] {
        let inst = instance(n, n / 10, 2);
        let z0 = inst.initial_settled().unwrap();
        group.bench_with_input(BenchmarkId::from_parameter(n), &inst, |b, inst| {
            b.iter(|| plan_bomp(&PlanningContext::new(inst, &z0)).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, steady_state, bomp);
criterion_main!(benches);

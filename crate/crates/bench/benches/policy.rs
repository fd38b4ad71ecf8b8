use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use depolar_bench::instance;
use depolar_core::agent::{NetConfig, Policy, PolicyMeta, TrainVariant};
use depolar_core::encoder::InputBuilder;
use depolar_core::Variant;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn policy() -> Policy {
    let meta = PolicyMeta {
        net: NetConfig::default(),
        trained_as: TrainVariant::Rl,
        variant: Variant::Mi,
    };
    Policy::init(meta, &mut ChaCha8Rng::seed_from_u64(0)).unwrap()
}

fn scoring(c: &mut Criterion) {
    let p = policy();
    let mut group = c.benchmark_group("score_all_nodes");
    group.sample_size(10);
    for n in [1_000, 10_000] {
        let inst = instance(n, 1, 3);
        let input = InputBuilder::new(&inst).build(&vec![false; n]);
        group.bench_with_input(BenchmarkId::from_parameter(n), &input, |b, input| {
            b.iter(|| p.net.q_values(&p.params, input).unwrap())
        });
    }
    group.finish();
}

fn deploy(c: &mut Criterion) {
    let p = policy();
    let mut group = c.benchmark_group("deploy");
    group.sample_size(10);
    let inst = instance(2_000, 20, 4);
    group.bench_function("n2000_k20", |b| b.iter(|| p.deploy(&inst, 20).unwrap()));
    group.finish();
}

criterion_group!(benches, scoring, deploy);
criterion_main!(benches);

//! Shared fixtures for the benchmarks under `benches/`.

use depolar_core::synthgen::{generate_instance, CostMode};
use depolar_core::{GenConfig, Instance, Variant};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Two-camp instance with exactly `n` nodes and unit costs.
pub fn instance(n: usize, budget: usize, seed: u64) -> Instance {
    let cfg = GenConfig {
        cost_mode: CostMode::Unit,
        variant: Variant::Mi,
        ..GenConfig::default().with_nodes(n, n)
    };
    generate_instance(&cfg, &mut ChaCha8Rng::seed_from_u64(seed))
        .expect("generator settings are valid")
        .with_budget(budget)
        .expect("budget fits")
}

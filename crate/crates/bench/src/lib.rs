//! Shared fixtures for the criterion benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use mblfe_core::dataset::{Dataset, InteractionRecord};
use mblfe_core::numerics::ParamStore;
use mblfe_core::recommender::params::initialize_store;
use mblfe_core::recommender::TrainingConfig;

/// Random single-behavior bipartite graph with exactly `edges` distinct edges.
pub fn random_graph(num_users: usize, num_items: usize, edges: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen = std::collections::HashSet::with_capacity(edges);
    let mut records = Vec::with_capacity(edges);
    while seen.len() < edges {
        let user = rng.gen_range(0..num_users);
        let item = rng.gen_range(0..num_items);
        if seen.insert((user, item)) {
            records.push(InteractionRecord { user, item, behavior: 0 });
        }
    }
    Dataset::from_records(num_users, num_items, vec!["interaction".into()], 0, &records)
}

/// Random multi-behavior dataset with the given per-behavior densities.
pub fn random_multi_behavior(
    num_users: usize,
    num_items: usize,
    densities: &[f64],
    seed: u64,
) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut records = Vec::new();
    for user in 0..num_users {
        for item in 0..num_items {
            for (behavior, &p) in densities.iter().enumerate() {
                if rng.gen_bool(p) {
                    records.push(InteractionRecord { user, item, behavior });
                }
            }
        }
        records.push(InteractionRecord {
            user,
            item: user % num_items,
            behavior: densities.len() - 1,
        });
    }
    let names = (0..densities.len()).map(|b| format!("behavior{b}")).collect();
    Dataset::from_records(num_users, num_items, names, densities.len() - 1, &records)
}

pub fn store_for(config: &TrainingConfig, dataset: &Dataset, seed: u64) -> ParamStore<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    initialize_store::<f32, _>(config, dataset.num_users, dataset.num_items, &mut rng)
}

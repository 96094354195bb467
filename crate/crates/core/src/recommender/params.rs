//! Parameter layout and initialization.

use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};

use super::TrainingConfig;
use crate::moe::{
    expert_hidden_bias, expert_hidden_weight, expert_output_bias, expert_output_weight,
    GATE_NOISE_WEIGHT, GATE_WEIGHT,
};
use crate::numerics::{Matrix, ParamStore, Real};

pub const USER_EMBEDDING: &str = "user_embedding";
pub const ITEM_EMBEDDING: &str = "item_embedding";
pub const TARGET_PROJECTION: &str = "target_projection";

/// Every parameter the model owns, with its shape, for a given configuration
/// and corpus size. Checkpoint loading validates against this table.
pub fn expected_shapes(
    config: &TrainingConfig,
    num_users: usize,
    num_items: usize,
) -> Vec<(String, usize, usize)> {
    let d = config.embedding_dim;
    let h = d / 2;
    let k = config.num_experts;
    let mut shapes = vec![
        (USER_EMBEDDING.to_string(), num_users, d),
        (ITEM_EMBEDDING.to_string(), num_items, d),
        (GATE_WEIGHT.to_string(), k, d),
        (GATE_NOISE_WEIGHT.to_string(), k, d),
        (TARGET_PROJECTION.to_string(), d, d),
    ];
    for expert in 0..k {
        shapes.push((expert_hidden_weight(expert), h, d));
        shapes.push((expert_hidden_bias(expert), 1, h));
        shapes.push((expert_output_weight(expert), d, h));
        shapes.push((expert_output_bias(expert), 1, d));
    }
    shapes
}

/// Fresh parameter store: embeddings and gate matrices from Normal(0, 0.01),
/// expert and projection weights from the Xavier-uniform range
/// `+-sqrt(6 / (fan_in + fan_out))`, biases zero. The small gate init keeps
/// early softmax output near uniform, which exercises the selection fallback
/// until the gate differentiates.
pub fn initialize_store<R: Real, G: Rng>(
    config: &TrainingConfig,
    num_users: usize,
    num_items: usize,
    rng: &mut G,
) -> ParamStore<R> {
    let d = config.embedding_dim;
    let h = d / 2;
    let k = config.num_experts;
    let mut store = ParamStore::new();

    store.insert(USER_EMBEDDING, normal_matrix(num_users, d, 0.01, rng));
    store.insert(ITEM_EMBEDDING, normal_matrix(num_items, d, 0.01, rng));
    store.insert(GATE_WEIGHT, normal_matrix(k, d, 0.01, rng));
    store.insert(GATE_NOISE_WEIGHT, normal_matrix(k, d, 0.01, rng));
    for expert in 0..k {
        store.insert(expert_hidden_weight(expert), xavier_matrix(h, d, rng));
        store.insert(expert_hidden_bias(expert), Matrix::zeros(1, h));
        store.insert(expert_output_weight(expert), xavier_matrix(d, h, rng));
        store.insert(expert_output_bias(expert), Matrix::zeros(1, d));
    }
    store.insert(TARGET_PROJECTION, xavier_matrix(d, d, rng));
    store
}

pub fn normal_matrix<R: Real, G: Rng>(
    rows: usize,
    cols: usize,
    std_dev: f64,
    rng: &mut G,
) -> Matrix<R> {
    let normal = Normal::new(0.0, std_dev).expect("valid normal");
    let data = (0..rows * cols)
        .map(|_| R::from_f64(normal.sample(rng)))
        .collect();
    Matrix::from_vec(rows, cols, data)
}

fn xavier_matrix<R: Real, G: Rng>(rows: usize, cols: usize, rng: &mut G) -> Matrix<R> {
    // rows = fan_out, cols = fan_in for a weight applied as W * x.
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    let uniform = Uniform::new_inclusive(-bound, bound);
    let data = (0..rows * cols)
        .map(|_| R::from_f64(uniform.sample(rng)))
        .collect();
    Matrix::from_vec(rows, cols, data)
}

//! Target-behavior recommendation: factor projection, scoring, the ranking
//! objective, the combined multi-task objective, and the training loop.

pub mod model;
pub mod params;
pub mod snapshot;
pub mod train;

pub use model::{build_step_graph, step_entities, StepBatches, StepGraph};
pub use params::{initialize_store, ITEM_EMBEDDING, TARGET_PROJECTION, USER_EMBEDDING};
pub use snapshot::{load_snapshot, ModelSnapshot, SnapshotError};
pub use train::{EpochMetrics, TrainRun, Trainer};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::moe::FactorSet;
use crate::numerics::{Matrix, ParamStore, Real, Tape};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("embedding_dim must be positive and even, got {0}")]
    BadEmbeddingDim(usize),
    #[error("num_experts must be at least 2, got {0}")]
    BadExpertCount(usize),
    #[error("gcn_layers must be at least 1, got {0}")]
    BadLayerCount(usize),
    #[error("temperature must be positive, got {0}")]
    BadTemperature(f64),
    #[error("alpha must lie in (0, 1), got {0}")]
    BadAlpha(f64),
    #[error("gamma must be non-negative, got {0}")]
    BadGamma(f64),
    #[error("learning_rate must be non-negative and finite, got {0}")]
    BadLearningRate(f64),
    #[error("batch_size must be at least 1")]
    BadBatchSize,
    #[error("eval_cutoffs must be non-empty with every cutoff at least 1")]
    BadCutoffs,
}

/// Every hyperparameter of a run; echoed into checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    /// Embedding width `d`; must be even (experts use a `d/2` hidden layer).
    pub embedding_dim: usize,
    /// Number of experts `K`.
    pub num_experts: usize,
    /// Propagation depth `L`.
    pub gcn_layers: usize,
    pub learning_rate: f64,
    /// Contrastive temperature.
    pub temperature: f64,
    /// Weight of the contrastive term inside the network objective.
    pub alpha: f64,
    /// L2 regularization coefficient.
    pub gamma: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub eval_cutoffs: Vec<usize>,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            embedding_dim: 64,
            num_experts: 8,
            gcn_layers: 2,
            learning_rate: 1e-3,
            temperature: 0.5,
            alpha: 0.1,
            gamma: 1e-3,
            batch_size: 1024,
            epochs: 100,
            seed: 42,
            eval_cutoffs: vec![10, 20],
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.embedding_dim == 0 || !self.embedding_dim.is_multiple_of(2) {
            return Err(ConfigError::BadEmbeddingDim(self.embedding_dim));
        }
        if self.num_experts < 2 {
            return Err(ConfigError::BadExpertCount(self.num_experts));
        }
        if self.gcn_layers == 0 {
            return Err(ConfigError::BadLayerCount(self.gcn_layers));
        }
        if self.temperature.is_nan() || self.temperature <= 0.0 {
            return Err(ConfigError::BadTemperature(self.temperature));
        }
        if self.alpha.is_nan() || self.alpha <= 0.0 || self.alpha >= 1.0 {
            return Err(ConfigError::BadAlpha(self.alpha));
        }
        if self.gamma.is_nan() || self.gamma < 0.0 {
            return Err(ConfigError::BadGamma(self.gamma));
        }
        // A zero learning rate is allowed: the training loop skips optimizer
        // updates, which freezes the parameters bit-exactly.
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return Err(ConfigError::BadLearningRate(self.learning_rate));
        }
        if self.batch_size == 0 {
            return Err(ConfigError::BadBatchSize);
        }
        if self.eval_cutoffs.is_empty() || self.eval_cutoffs.contains(&0) {
            return Err(ConfigError::BadCutoffs);
        }
        Ok(())
    }
}

/// Projects one user factor into the target behavior space:
/// `out[j] = sum_i factor[i] * projection[i][j]`. Item factors are never
/// projected.
pub fn project_factor<R: Real>(factor: &[R], projection: &Matrix<R>) -> Vec<R> {
    assert_eq!(projection.rows(), factor.len(), "projection shape mismatch");
    let d = projection.cols();
    let mut out = vec![R::zero(); d];
    for (i, &f) in factor.iter().enumerate() {
        let row = projection.row(i);
        for j in 0..d {
            out[j] = out[j] + f * row[j];
        }
    }
    out
}

/// Preference score: sum over the user's selected experts of
/// `<projected user factor, item factor>`.
pub fn score<R: Real>(
    user: &FactorSet<R>,
    item: &FactorSet<R>,
    projection: &Matrix<R>,
) -> R {
    let mut total = R::zero();
    for k in user.selected() {
        let projected = project_factor(&user.factors[k], projection);
        total = total
            + projected
                .iter()
                .zip(&item.factors[k])
                .map(|(&a, &b)| a * b)
                .fold(R::zero(), |acc, v| acc + v);
    }
    total
}

/// Ranking objective over scored target-behavior triples:
/// `mean(-ln(sigmoid(pos - neg)))`.
pub fn rec_loss<R: Real>(pos_scores: &[R], neg_scores: &[R]) -> R {
    assert_eq!(pos_scores.len(), neg_scores.len());
    if pos_scores.is_empty() {
        return R::zero();
    }
    let mut tape = Tape::new();
    let pos = tape.constant(Matrix::column(pos_scores));
    let neg = tape.constant(Matrix::column(neg_scores));
    let loss = crate::propagation::bpr_loss_node(&mut tape, pos, neg);
    tape.scalar(loss)
}

#[derive(Debug, Error)]
#[error("{component} loss is not finite: {value}")]
pub struct NonFiniteComponent {
    pub component: &'static str,
    pub value: f64,
}

/// Combined multi-task objective with unit task weights:
/// `L_enh + L_net + L_rec + gamma * ||params||^2`.
pub fn total_loss<R: Real>(
    enhancement: R,
    net: R,
    rec: R,
    gamma: f64,
    store: &ParamStore<R>,
) -> Result<R, NonFiniteComponent> {
    for (component, value) in [
        ("enhancement", enhancement),
        ("net", net),
        ("rec", rec),
    ] {
        if !value.is_finite() {
            return Err(NonFiniteComponent {
                component,
                value: value.as_f64(),
            });
        }
    }
    Ok(enhancement + net + rec + R::from_f64(gamma) * store.squared_param_norm())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::moe::Gating;

    #[test]
    fn config_validation_covers_every_invariant() {
        let ok = TrainingConfig::default();
        assert!(ok.validate().is_ok());
        let cases: Vec<(TrainingConfig, &str)> = vec![
            (TrainingConfig { embedding_dim: 7, ..ok.clone() }, "odd dim"),
            (TrainingConfig { embedding_dim: 0, ..ok.clone() }, "zero dim"),
            (TrainingConfig { num_experts: 1, ..ok.clone() }, "one expert"),
            (TrainingConfig { gcn_layers: 0, ..ok.clone() }, "no layers"),
            (TrainingConfig { temperature: 0.0, ..ok.clone() }, "zero tau"),
            (TrainingConfig { alpha: 1.0, ..ok.clone() }, "alpha 1"),
            (TrainingConfig { alpha: 0.0, ..ok.clone() }, "alpha 0"),
            (TrainingConfig { gamma: -0.1, ..ok.clone() }, "negative gamma"),
            (TrainingConfig { learning_rate: -1.0, ..ok.clone() }, "negative lr"),
            (TrainingConfig { batch_size: 0, ..ok.clone() }, "zero batch"),
            (TrainingConfig { eval_cutoffs: vec![], ..ok.clone() }, "no cutoffs"),
            (TrainingConfig { eval_cutoffs: vec![0], ..ok.clone() }, "zero cutoff"),
        ];
        for (config, label) in cases {
            assert!(config.validate().is_err(), "{label} should fail");
        }
        let zero_lr = TrainingConfig { learning_rate: 0.0, ..ok };
        assert!(zero_lr.validate().is_ok());
    }

    #[test]
    fn projection_identity_zero_and_permutation() {
        let identity = Matrix::from_vec(2, 2, vec![1.0, 0.0, 0.0, 1.0]);
        assert_eq!(project_factor(&[3.0, -1.0], &identity), vec![3.0, -1.0]);
        let zero = Matrix::zeros(2, 2);
        assert_eq!(project_factor(&[3.0, -1.0], &zero), vec![0.0, 0.0]);
        let swap = Matrix::from_vec(2, 2, vec![0.0, 1.0, 1.0, 0.0]);
        assert_eq!(project_factor(&[1.0, 2.0], &swap), vec![2.0, 1.0]);
    }

    fn user_set(factors: Vec<Vec<f64>>, selected: Vec<usize>) -> FactorSet<f64> {
        let k = factors.len();
        let mut gate_values = vec![0.0; k];
        let mut probabilities = vec![0.0; k];
        for &s in &selected {
            gate_values[s] = 1.0;
            probabilities[s] = 1.0 / selected.len() as f64;
        }
        FactorSet {
            owner: 0,
            factors,
            gating: Gating::User(crate::moe::GateDecision {
                probabilities,
                gate_values,
                selected,
                fallback: false,
            }),
        }
    }

    fn item_set(factors: Vec<Vec<f64>>) -> FactorSet<f64> {
        FactorSet {
            owner: 0,
            factors,
            gating: Gating::AllExperts,
        }
    }

    #[test]
    fn score_examples() {
        let identity = Matrix::from_vec(2, 2, vec![1.0, 0.0, 0.0, 1.0]);
        // S = {1}: projected [1, 0] dot [2, 0] = 2.
        let user = user_set(vec![vec![0.0, 0.0], vec![1.0, 0.0]], vec![1]);
        let item = item_set(vec![vec![9.0, 9.0], vec![2.0, 0.0]]);
        assert_eq!(score(&user, &item, &identity), 2.0);

        // S = {0, 1} with per-factor dots 0.5 and -0.2.
        let user = user_set(vec![vec![0.5, 0.0], vec![-0.2, 0.0]], vec![0, 1]);
        let item = item_set(vec![vec![1.0, 0.0], vec![1.0, 0.0]]);
        assert!((score(&user, &item, &identity) - 0.3).abs() < 1e-12);
    }

    #[test]
    fn score_ignores_unselected_expert_perturbations() {
        let identity = Matrix::from_vec(2, 2, vec![1.0, 0.0, 0.0, 1.0]);
        let user = user_set(vec![vec![1.0, 0.0], vec![0.0, 0.0]], vec![0]);
        let item_a = item_set(vec![vec![1.0, 1.0], vec![5.0, 5.0]]);
        let item_b = item_set(vec![vec![1.0, 1.0], vec![-7.0, 3.0]]);
        assert_eq!(
            score(&user, &item_a, &identity),
            score(&user, &item_b, &identity)
        );
    }

    #[test]
    fn score_is_linear_in_the_projection() {
        let user = user_set(vec![vec![0.4, -0.3]], vec![0]);
        let item = item_set(vec![vec![0.7, 0.9]]);
        let w = Matrix::from_vec(2, 2, vec![0.1, 0.4, -0.2, 0.3]);
        let a = score(&user, &item, &w);
        let b = score(&user, &item, &w.scale(3.0));
        assert!((3.0 * a - b).abs() < 1e-12);
    }

    #[test]
    fn rec_loss_closed_forms() {
        // Equal scores: ln 2 per triple.
        let loss: f64 = rec_loss(&[1.0, -2.0], &[1.0, -2.0]);
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-12);
        // Margin 1: -ln(sigmoid(1)) ~= 0.3133.
        let loss: f64 = rec_loss(&[1.0], &[0.0]);
        assert!((loss - 0.3133).abs() < 1e-4);
        // Swapping pos and neg increases the loss.
        let better: f64 = rec_loss(&[1.0], &[0.0]);
        let worse: f64 = rec_loss(&[0.0], &[1.0]);
        assert!(worse > better);
    }

    #[test]
    fn total_loss_adds_squared_norm() {
        let mut store = ParamStore::<f64>::new();
        store.insert("w", Matrix::scalar(3.0));
        assert_eq!(total_loss(0.0, 0.0, 0.0, 1.0, &store).unwrap(), 9.0);
        let plain = total_loss(0.5, 0.7, 0.3, 0.0, &store).unwrap();
        assert!((plain - 1.5).abs() < 1e-12);
        let err = total_loss(f64::NAN, 0.0, 0.0, 0.0, &store).unwrap_err();
        assert_eq!(err.component, "enhancement");
    }
}

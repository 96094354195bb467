//! Training loop: per-epoch sampling, interleaved batches, Adam updates,
//! and non-finite-loss protection.

use log::debug;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::dataset::{sample_from_set, sample_merged, BprTriple, Dataset, InteractionSet, MergedSample};
use crate::numerics::{NumericsError, ParamStore, Real};
use crate::propagation::{behavior_weights, build_adjacency, BehaviorWeights, NormalizedAdjacency};
use crate::recommender::model::{build_step_graph, step_entities, StepBatches};
use crate::recommender::params::normal_matrix;
use crate::recommender::{ConfigError, TrainingConfig};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("epoch {epoch} step {step}: {component} loss is not finite ({value})")]
    NonFiniteLoss {
        epoch: usize,
        step: usize,
        component: &'static str,
        value: f64,
    },
}

/// Averaged loss components of one epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochMetrics {
    pub enhancement: f64,
    pub log: f64,
    pub nce: f64,
    pub net: f64,
    pub rec: f64,
    pub regularization: f64,
    pub total: f64,
}

/// Outcome of a full training run. When a non-finite loss aborted the run,
/// the store holds the last state that completed an epoch cleanly and
/// `aborted_at` names the failed epoch.
#[derive(Debug)]
pub struct TrainRun {
    pub metrics: Vec<EpochMetrics>,
    pub aborted_at: Option<usize>,
}

/// Drives training of one model over a train-split dataset.
pub struct Trainer<'a, R: Real> {
    dataset: &'a Dataset,
    config: TrainingConfig,
    adjacencies: Vec<NormalizedAdjacency<R>>,
    weights: BehaviorWeights<R>,
    merged: InteractionSet,
}

impl<'a, R: Real> Trainer<'a, R> {
    pub fn new(dataset: &'a Dataset, config: &TrainingConfig) -> Result<Self, TrainError> {
        config.validate()?;
        let adjacencies = dataset.behaviors.iter().map(build_adjacency).collect();
        let weights = behavior_weights(dataset);
        let merged = dataset.merged_interactions();
        Ok(Trainer {
            dataset,
            config: config.clone(),
            adjacencies,
            weights,
            merged,
        })
    }

    pub fn config(&self) -> &TrainingConfig {
        &self.config
    }

    pub fn adjacencies(&self) -> &[NormalizedAdjacency<R>] {
        &self.adjacencies
    }

    pub fn weights(&self) -> &BehaviorWeights<R> {
        &self.weights
    }

    /// One generator stream per epoch, all derived from the run seed.
    fn epoch_rng(&self, epoch: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(epoch as u64 + 1);
        rng
    }

    /// Runs one epoch: draws fresh ranking triples for every behavior, fresh
    /// merged-set samples, and fresh target triples, then interleaves them so
    /// every optimizer step sees all three loss components. With a zero
    /// learning rate the optimizer update is skipped and parameters stay
    /// bit-identical.
    pub fn train_epoch(
        &self,
        store: &mut ParamStore<R>,
        epoch: usize,
    ) -> Result<EpochMetrics, TrainError> {
        let mut rng = self.epoch_rng(epoch);

        let behavior_triples: Vec<Vec<BprTriple>> = self
            .dataset
            .behaviors
            .iter()
            .map(|b| {
                let triples = sample_from_set(&b.interactions, b.len(), &mut rng);
                if triples.is_empty() {
                    debug!("behavior {} contributed no triples this epoch", b.behavior_id);
                }
                triples
            })
            .collect();
        let mut merged_samples: Vec<MergedSample> = sample_merged(&self.merged, &mut rng);
        merged_samples.shuffle(&mut rng);
        let target = &self.dataset.target().interactions;
        let rec_triples = sample_from_set(target, target.len(), &mut rng);

        let batch = self.config.batch_size;
        let steps = behavior_triples
            .iter()
            .map(|t| t.len())
            .chain([merged_samples.len(), rec_triples.len()])
            .map(|len| len.div_ceil(batch))
            .max()
            .unwrap_or(1)
            .max(1);

        let mut sums = EpochMetrics {
            enhancement: 0.0,
            log: 0.0,
            nce: 0.0,
            net: 0.0,
            rec: 0.0,
            regularization: 0.0,
            total: 0.0,
        };
        for step in 0..steps {
            let batches = StepBatches {
                behavior_triples: behavior_triples
                    .iter()
                    .map(|t| chunk(t, step, steps))
                    .collect(),
                merged: chunk(&merged_samples, step, steps),
                rec_triples: chunk(&rec_triples, step, steps),
            };
            let (step_users, _) = step_entities(&batches);
            let noise = if step_users.is_empty() {
                None
            } else {
                Some(normal_matrix::<R, _>(
                    step_users.len(),
                    self.config.num_experts,
                    1.0,
                    &mut rng,
                ))
            };
            let graph = build_step_graph(
                store,
                &self.adjacencies,
                &self.weights,
                &batches,
                noise.as_ref(),
                &self.config,
            );
            let losses = graph.losses();
            for (component, value) in [
                ("enhancement", losses.enhancement),
                ("net", losses.net),
                ("rec", losses.rec),
                ("total", losses.total),
            ] {
                if !value.is_finite() {
                    return Err(TrainError::NonFiniteLoss {
                        epoch,
                        step,
                        component,
                        value,
                    });
                }
            }
            sums.enhancement += losses.enhancement;
            sums.log += losses.log;
            sums.nce += losses.nce;
            sums.net += losses.net;
            sums.rec += losses.rec;
            sums.regularization += losses.regularization;
            sums.total += losses.total;

            let mut tape = graph.tape;
            tape.backward(graph.total, store)?;
            if self.config.learning_rate > 0.0 {
                store.adam_step(self.config.learning_rate)?;
            }
            store.zero_grads();
        }

        let n = steps as f64;
        Ok(EpochMetrics {
            enhancement: sums.enhancement / n,
            log: sums.log / n,
            nce: sums.nce / n,
            net: sums.net / n,
            rec: sums.rec / n,
            regularization: sums.regularization / n,
            total: sums.total / n,
        })
    }

    /// Runs the configured number of epochs. A non-finite loss aborts the run
    /// and rolls the store back to the last state that finished an epoch.
    pub fn fit(
        &self,
        store: &mut ParamStore<R>,
        mut observer: impl FnMut(usize, &EpochMetrics),
    ) -> Result<TrainRun, TrainError> {
        let mut metrics = Vec::with_capacity(self.config.epochs);
        for epoch in 0..self.config.epochs {
            let last_good = store.clone();
            match self.train_epoch(store, epoch) {
                Ok(m) => {
                    observer(epoch, &m);
                    metrics.push(m);
                }
                Err(err @ TrainError::NonFiniteLoss { .. }) => {
                    log::error!("{err}; keeping the last completed epoch's parameters");
                    *store = last_good;
                    return Ok(TrainRun {
                        metrics,
                        aborted_at: Some(epoch),
                    });
                }
                Err(other) => return Err(other),
            }
        }
        Ok(TrainRun {
            metrics,
            aborted_at: None,
        })
    }
}

/// Slice of `source` assigned to `step` when the epoch is cut into `steps`
/// interleaved chunks.
fn chunk<T>(source: &[T], step: usize, steps: usize) -> &[T] {
    if source.is_empty() {
        return source;
    }
    let per_step = source.len().div_ceil(steps);
    let start = (step * per_step).min(source.len());
    let end = ((step + 1) * per_step).min(source.len());
    &source[start..end]
}

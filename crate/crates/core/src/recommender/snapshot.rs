//! Model snapshots over the checkpoint container.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::checkpoint::{self, CheckpointError};
use crate::numerics::{ParamStore, Real};
use crate::recommender::params::{expected_shapes, USER_EMBEDDING};
use crate::recommender::{ConfigError, TrainingConfig};

#[derive(Debug, Error)]
pub enum SnapshotError {
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("snapshot config invalid: {0}")]
    Config(#[from] ConfigError),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SnapshotMeta {
    config: TrainingConfig,
    epoch: usize,
    split_seed: u64,
}

/// Full model state: parameters plus the configuration, epoch counter, and
/// split seed they were trained under. Round-trips through the 32-bit
/// checkpoint container bit-exactly in `f32` mode.
pub struct ModelSnapshot<R: Real> {
    pub params: ParamStore<R>,
    pub config: TrainingConfig,
    pub epoch: usize,
    pub split_seed: u64,
}

impl<R: Real> std::fmt::Debug for ModelSnapshot<R> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ModelSnapshot")
            .field("params", &self.params.len())
            .field("config", &self.config)
            .field("epoch", &self.epoch)
            .field("split_seed", &self.split_seed)
            .finish()
    }
}

impl<R: Real> ModelSnapshot<R> {
    pub fn new(params: ParamStore<R>, config: TrainingConfig, epoch: usize, split_seed: u64) -> Self {
        ModelSnapshot {
            params,
            config,
            epoch,
            split_seed,
        }
    }

    pub fn num_users(&self) -> usize {
        self.params.param(USER_EMBEDDING).rows()
    }

    pub fn num_items(&self) -> usize {
        self.params.param(crate::recommender::params::ITEM_EMBEDDING).rows()
    }

    pub fn save(&self, path: &Path) -> Result<(), SnapshotError> {
        let meta = SnapshotMeta {
            config: self.config.clone(),
            epoch: self.epoch,
            split_seed: self.split_seed,
        };
        checkpoint::save(path, &self.params, &meta)?;
        Ok(())
    }
}

/// Loads a snapshot and verifies every parameter shape against the embedded
/// configuration; mismatches name the offending parameter.
pub fn load_snapshot<R: Real>(path: &Path) -> Result<ModelSnapshot<R>, SnapshotError> {
    let (params, meta): (ParamStore<R>, SnapshotMeta) = checkpoint::load(path)?;
    meta.config.validate()?;
    let num_users = params
        .try_param(USER_EMBEDDING)
        .ok_or_else(|| CheckpointError::MissingParam(USER_EMBEDDING.to_string()))?
        .rows();
    let num_items = params
        .try_param(crate::recommender::params::ITEM_EMBEDDING)
        .ok_or_else(|| {
            CheckpointError::MissingParam(crate::recommender::params::ITEM_EMBEDDING.to_string())
        })?
        .rows();
    checkpoint::verify_shapes(&params, &expected_shapes(&meta.config, num_users, num_items))?;
    Ok(ModelSnapshot {
        params,
        config: meta.config,
        epoch: meta.epoch,
        split_seed: meta.split_seed,
    })
}

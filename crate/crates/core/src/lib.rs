//! Multi-behavior recommendation with latent factor experts.
//!
//! The engine enhances randomly initialized embeddings through per-behavior
//! graph propagation, extracts shared latent factors with a gated mixture of
//! experts trained under contrastive and interaction objectives, fine-tunes
//! factor correlations for target-behavior ranking, and evaluates with
//! leave-one-out full ranking.

pub mod config;
pub mod dataset;
pub mod eval;
pub mod moe;
pub mod numerics;
pub mod propagation;
pub mod recommender;

pub use config::RunConfig;
pub use dataset::{BehaviorMatrix, BprTriple, Dataset, InteractionRecord, InteractionSet};
pub use eval::{evaluate, EvalModel, EvalResult, SelectionStats};
pub use moe::{FactorSet, GateDecision};
pub use numerics::{grad_check, Matrix, ParamStore, Real, Tape};
pub use propagation::{EnhancedEmbeddings, NormalizedAdjacency};
pub use recommender::{EpochMetrics, ModelSnapshot, Trainer, TrainingConfig};

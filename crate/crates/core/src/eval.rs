//! Leave-one-out full-ranking evaluation, expert-selection statistics, and
//! factor export.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::dataset::{Dataset, InteractionSet};
use crate::moe::{
    all_expert_outputs, expert_forward, gate_forward, ExpertParams, GateDecision, GateParams,
};
use crate::numerics::{Matrix, Real};
use crate::propagation::{behavior_weights, build_adjacency, enhance, EnhancedEmbeddings};
use crate::recommender::params::TARGET_PROJECTION;
use crate::recommender::{project_factor, EpochMetrics, ModelSnapshot};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("empty test set")]
    EmptyTestSet,
    #[error("cutoffs must be non-empty with every cutoff at least 1")]
    InvalidCutoffs,
    #[error("snapshot covers {snapshot} users/items but the dataset has {dataset}")]
    CorpusMismatch { snapshot: usize, dataset: usize },
    #[error("test user {user} out of range")]
    UserOutOfRange { user: usize },
    #[error("held-out item {item} of user {user} is still in the training interactions")]
    HeldItemInTrain { user: usize, item: usize },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Propagation(#[from] crate::propagation::PropagationError),
}

/// Snapshot prepared for scoring: enhanced embeddings, per-user gate
/// decisions (deterministic, no noise), and item factor matrices for every
/// expert selected by at least one user.
pub struct EvalModel<R: Real> {
    snapshot: ModelSnapshot<R>,
    enhanced: EnhancedEmbeddings<R>,
    decisions: Vec<GateDecision<R>>,
    /// Per expert: `num_items x d` factor matrix, present only for experts
    /// some user selected.
    item_factors: Vec<Option<Matrix<R>>>,
}

impl<R: Real> EvalModel<R> {
    /// Prepares a snapshot against its training-split dataset.
    pub fn new(snapshot: ModelSnapshot<R>, train: &Dataset) -> Result<Self, EvalError> {
        if snapshot.num_users() != train.num_users {
            return Err(EvalError::CorpusMismatch {
                snapshot: snapshot.num_users(),
                dataset: train.num_users,
            });
        }
        if snapshot.num_items() != train.num_items {
            return Err(EvalError::CorpusMismatch {
                snapshot: snapshot.num_items(),
                dataset: train.num_items,
            });
        }
        let adjacencies: Vec<_> = train.behaviors.iter().map(build_adjacency).collect();
        let weights = behavior_weights(train);
        let enhanced = enhance(
            &adjacencies,
            weights,
            snapshot.params.param(crate::recommender::params::USER_EMBEDDING),
            snapshot.params.param(crate::recommender::params::ITEM_EMBEDDING),
            snapshot.config.gcn_layers,
        )?;

        let gate = GateParams::from_store(&snapshot.params);
        let decisions: Vec<GateDecision<R>> = (0..train.num_users)
            .map(|u| gate_forward(enhanced.users.row(u), &gate, None))
            .collect();

        // Item factors only for experts selected by at least one user.
        let experts = ExpertParams::all_from_store(&snapshot.params, snapshot.config.num_experts);
        let mut needed = vec![false; snapshot.config.num_experts];
        for decision in &decisions {
            for &k in &decision.selected {
                needed[k] = true;
            }
        }
        let num_items = train.num_items;
        let dim = snapshot.config.embedding_dim;
        let item_factors = needed
            .iter()
            .enumerate()
            .map(|(k, &used)| {
                if !used {
                    return None;
                }
                let mut factors = Matrix::zeros(num_items, dim);
                for i in 0..num_items {
                    let out = expert_forward(enhanced.items.row(i), &experts[k]);
                    factors.row_mut(i).copy_from_slice(&out);
                }
                Some(factors)
            })
            .collect();

        Ok(EvalModel {
            snapshot,
            enhanced,
            decisions,
            item_factors,
        })
    }

    pub fn snapshot(&self) -> &ModelSnapshot<R> {
        &self.snapshot
    }

    pub fn num_users(&self) -> usize {
        self.decisions.len()
    }

    pub fn num_items(&self) -> usize {
        self.enhanced.items.rows()
    }

    pub fn num_experts(&self) -> usize {
        self.snapshot.config.num_experts
    }

    pub fn gate_decision(&self, user: usize) -> &GateDecision<R> {
        &self.decisions[user]
    }

    /// Scores every item for one user: for each selected expert, the gated
    /// user factor is projected into the target space and matched against the
    /// item factors.
    pub fn score_items(&self, user: usize) -> Vec<R> {
        let decision = &self.decisions[user];
        let experts =
            ExpertParams::all_from_store(&self.snapshot.params, self.snapshot.config.num_experts);
        let projection = self.snapshot.params.param(TARGET_PROJECTION);
        let mut scores = vec![R::zero(); self.num_items()];
        for &k in &decision.selected {
            let raw = expert_forward(self.enhanced.users.row(user), &experts[k]);
            let gate_value = decision.gate_values[k];
            let gated: Vec<R> = raw.into_iter().map(|v| gate_value * v).collect();
            let projected = project_factor(&gated, projection);
            let factors = self.item_factors[k]
                .as_ref()
                .expect("selected expert has item factors");
            for (i, score) in scores.iter_mut().enumerate() {
                let row = factors.row(i);
                let mut dot = R::zero();
                for (a, b) in projected.iter().zip(row) {
                    dot = dot + *a * *b;
                }
                *score = *score + dot;
            }
        }
        scores
    }

    /// Pre-gating outputs of every expert for one user.
    pub fn full_user_factors(&self, user: usize) -> Vec<Vec<R>> {
        let experts =
            ExpertParams::all_from_store(&self.snapshot.params, self.snapshot.config.num_experts);
        all_expert_outputs(self.enhanced.users.row(user), &experts)
    }
}

/// 1-based rank of the held-out item under full ranking: every item outside
/// the user's target-behavior training interactions is a candidate, sorted by
/// descending score with ties broken by ascending item index.
pub fn rank_held_out<R: Real>(
    model: &EvalModel<R>,
    user: usize,
    held_item: usize,
    train_target: &InteractionSet,
) -> usize {
    debug_assert!(!train_target.contains(user, held_item));
    let scores = model.score_items(user);
    rank_among(&scores, held_item, train_target.items_of(user))
}

/// Rank of `held` among all indices not in the sorted `excluded` list, under
/// descending score with ascending-index tie-break.
pub fn rank_among<R: Real>(scores: &[R], held: usize, excluded: &[u32]) -> usize {
    let held_score = scores[held];
    let mut rank = 1usize;
    for (item, &score) in scores.iter().enumerate() {
        if item == held || excluded.binary_search(&(item as u32)).is_ok() {
            continue;
        }
        if score > held_score || (score == held_score && item < held) {
            rank += 1;
        }
    }
    rank
}

/// Hit rate at cutoff `k`: 1 when the held item ranked within the top `k`.
pub fn hr_at_k(rank: usize, k: usize) -> f64 {
    assert!(rank >= 1 && k >= 1);
    if rank <= k {
        1.0
    } else {
        0.0
    }
}

/// Discounted gain at cutoff `k` for the single-relevant-item protocol:
/// `1 / log2(rank + 1)` inside the cutoff, 0 outside.
pub fn ndcg_at_k(rank: usize, k: usize) -> f64 {
    assert!(rank >= 1 && k >= 1);
    if rank <= k {
        1.0 / ((rank + 1) as f64).log2()
    } else {
        0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CutoffMetrics {
    pub cutoff: usize,
    pub hr: f64,
    pub ndcg: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalResult {
    pub per_cutoff: Vec<CutoffMetrics>,
    /// `(user, rank)` for every test pair, in test order.
    pub ranks: Vec<(usize, usize)>,
    pub users_evaluated: usize,
}

/// Full leave-one-out evaluation of a prepared model.
pub fn evaluate<R: Real>(
    model: &EvalModel<R>,
    train_target: &InteractionSet,
    test: &[(usize, usize)],
    cutoffs: &[usize],
) -> Result<EvalResult, EvalError> {
    if test.is_empty() {
        return Err(EvalError::EmptyTestSet);
    }
    if cutoffs.is_empty() || cutoffs.contains(&0) {
        return Err(EvalError::InvalidCutoffs);
    }
    let mut ranks = Vec::with_capacity(test.len());
    for &(user, held) in test {
        if user >= model.num_users() {
            return Err(EvalError::UserOutOfRange { user });
        }
        if train_target.contains(user, held) {
            return Err(EvalError::HeldItemInTrain { user, item: held });
        }
        ranks.push((user, rank_held_out(model, user, held, train_target)));
    }
    Ok(EvalResult {
        per_cutoff: metrics_from_ranks(&ranks, cutoffs),
        users_evaluated: test.len(),
        ranks,
    })
}

/// Per-cutoff metrics averaged over the evaluated users.
pub fn metrics_from_ranks(ranks: &[(usize, usize)], cutoffs: &[usize]) -> Vec<CutoffMetrics> {
    let n = ranks.len() as f64;
    cutoffs
        .iter()
        .map(|&k| CutoffMetrics {
            cutoff: k,
            hr: ranks.iter().map(|&(_, r)| hr_at_k(r, k)).sum::<f64>() / n,
            ndcg: ranks.iter().map(|&(_, r)| ndcg_at_k(r, k)).sum::<f64>() / n,
        })
        .collect()
}

/// Distribution of gate selections across the user base.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionStats {
    /// `histogram[c]` = number of users that selected exactly `c` experts;
    /// index 0 is always empty (the fallback guarantees at least one).
    pub histogram: Vec<usize>,
    /// Number of users whose gate selected each expert.
    pub per_expert_usage: Vec<usize>,
    pub users: usize,
}

impl SelectionStats {
    /// Selected-expert count with the most users (lowest count wins ties).
    pub fn mode(&self) -> usize {
        let mut best = 1;
        for count in 1..self.histogram.len() {
            if self.histogram[count] > self.histogram[best] {
                best = count;
            }
        }
        best
    }
}

/// Runs the deterministic gate for every user and reports the selection
/// histogram plus per-expert usage.
pub fn selection_stats<R: Real>(model: &EvalModel<R>) -> SelectionStats {
    let k = model.num_experts();
    let mut histogram = vec![0usize; k + 1];
    let mut per_expert_usage = vec![0usize; k];
    for user in 0..model.num_users() {
        let decision = model.gate_decision(user);
        histogram[decision.selected.len()] += 1;
        for &expert in &decision.selected {
            per_expert_usage[expert] += 1;
        }
    }
    SelectionStats {
        histogram,
        per_expert_usage,
        users: model.num_users(),
    }
}

/// Writes `sample_size` seeded-sampled users' latent factors, all experts
/// computed pre-gating, as `expert<TAB>comma-separated-components` rows
/// grouped by expert.
pub fn export_factors<R: Real, W: Write>(
    model: &EvalModel<R>,
    sample_size: usize,
    seed: u64,
    writer: &mut W,
) -> Result<usize, EvalError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = sample_size.min(model.num_users());
    let users = rand::seq::index::sample(&mut rng, model.num_users(), n).into_vec();
    let factors: Vec<Vec<Vec<R>>> = users
        .iter()
        .map(|&u| model.full_user_factors(u))
        .collect();
    let mut rows = 0usize;
    for k in 0..model.num_experts() {
        for per_user in &factors {
            let components: Vec<String> =
                per_user[k].iter().map(|v| format!("{v}")).collect();
            writeln!(writer, "{k}\t{}", components.join(","))?;
            rows += 1;
        }
    }
    Ok(rows)
}

// ---------------------------------------------------------------------------
// Deterministic artifact writers shared by the CLI and the test suites.
// ---------------------------------------------------------------------------

/// One JSON object per cutoff: `{"cutoff": k, "hr": ..., "ndcg": ...}`.
pub fn write_metrics_json<W: Write>(writer: &mut W, result: &EvalResult) -> std::io::Result<()> {
    for metrics in &result.per_cutoff {
        let line = serde_json::to_string(metrics).expect("metrics serialize");
        writeln!(writer, "{line}")?;
    }
    Ok(())
}

/// Per-user rank file: `user<TAB>rank` lines.
pub fn write_rank_file<W: Write>(writer: &mut W, result: &EvalResult) -> std::io::Result<()> {
    for &(user, rank) in &result.ranks {
        writeln!(writer, "{user}\t{rank}")?;
    }
    Ok(())
}

/// Histogram lines `selected-count<TAB>num-users` for counts `1..=K`.
pub fn write_selection_histogram<W: Write>(
    writer: &mut W,
    stats: &SelectionStats,
) -> std::io::Result<()> {
    for count in 1..stats.histogram.len() {
        writeln!(writer, "{count}\t{}", stats.histogram[count])?;
    }
    Ok(())
}

/// Gate dump: `user<TAB>selected-count<TAB>comma-separated expert indices`.
pub fn write_gate_dump<R: Real, W: Write>(
    writer: &mut W,
    model: &EvalModel<R>,
) -> std::io::Result<()> {
    for user in 0..model.num_users() {
        let decision = model.gate_decision(user);
        let experts: Vec<String> = decision.selected.iter().map(|k| k.to_string()).collect();
        writeln!(
            writer,
            "{user}\t{}\t{}",
            decision.selected.len(),
            experts.join(",")
        )?;
    }
    Ok(())
}

/// One training-log line: `epoch<TAB>L_enh<TAB>L_net<TAB>L_rec<TAB>total`.
pub fn write_epoch_line<W: Write>(
    writer: &mut W,
    epoch: usize,
    metrics: &EpochMetrics,
) -> std::io::Result<()> {
    writeln!(
        writer,
        "{epoch}\t{}\t{}\t{}\t{}",
        metrics.enhancement, metrics.net, metrics.rec, metrics.total
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn metric_closed_forms() {
        assert_eq!(hr_at_k(1, 10), 1.0);
        assert_eq!(ndcg_at_k(1, 10), 1.0);
        // rank 3: 1 / log2(4) = 0.5
        assert!((ndcg_at_k(3, 10) - 0.5).abs() < 1e-12);
        assert_eq!(hr_at_k(11, 10), 0.0);
        assert_eq!(ndcg_at_k(11, 10), 0.0);
    }

    #[test]
    fn metrics_are_monotone_in_k() {
        for rank in 1..30 {
            let mut prev_hr = 0.0;
            let mut prev_ndcg = 0.0;
            for k in 1..40 {
                let hr = hr_at_k(rank, k);
                let ndcg = ndcg_at_k(rank, k);
                assert!(hr >= prev_hr);
                assert!(ndcg >= prev_ndcg);
                prev_hr = hr;
                prev_ndcg = ndcg;
            }
        }
    }

    #[test]
    fn rank_among_sorts_descending_with_index_tiebreak() {
        // Scores (3, 2, 5, 1, 4), held item is the score-4 one: only the
        // score-5 item beats it.
        let scores = [3.0f64, 2.0, 5.0, 1.0, 4.0];
        assert_eq!(rank_among(&scores, 4, &[]), 2);
        // Strictly highest score ranks first.
        assert_eq!(rank_among(&scores, 2, &[]), 1);
        // All scores equal: the smallest index among candidates wins.
        let flat = [1.0f64; 5];
        assert_eq!(rank_among(&flat, 0, &[]), 1);
        assert_eq!(rank_among(&flat, 2, &[]), 3);
        assert_eq!(rank_among(&flat, 2, &[0, 1]), 1);
        // Excluded items never count against the held one.
        assert_eq!(rank_among(&scores, 4, &[2]), 1);
    }

    #[test]
    fn metrics_average_over_users() {
        // Ranks (1, 12) at k = 10: HR@10 = 0.5.
        let ranks = vec![(0usize, 1usize), (1, 12)];
        let metrics = metrics_from_ranks(&ranks, &[10]);
        assert_eq!(metrics[0].hr, 0.5);
        assert_eq!(metrics[0].ndcg, 0.5);
    }

    #[test]
    fn selection_stats_mode_prefers_highest_mass() {
        let stats = SelectionStats {
            histogram: vec![0, 2, 5, 3],
            per_expert_usage: vec![4, 3, 3],
            users: 10,
        };
        assert_eq!(stats.mode(), 2);
    }
}

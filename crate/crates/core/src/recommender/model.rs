//! End-to-end differentiable training step.
//!
//! One step assembles, on a single tape: per-behavior propagation from the
//! shared embeddings, frequency-weighted aggregation, the gate over the
//! step's users, per-expert factor extraction, and all loss components.
//!
//! Expert outputs are computed for every expert over the step's users because
//! the contrastive term constrains all experts through their pre-gating
//! outputs; the gate's zero values still make unselected experts' factors
//! (and their gradients from the gated losses) exactly zero.

use std::sync::Arc;

use crate::dataset::{BprTriple, MergedSample};
use crate::moe::{
    contrastive_side_node, expert_forward_node, gate_nodes, interaction_loss_node, ExpertNodes,
    GateDecision, GATE_NOISE_WEIGHT, GATE_WEIGHT,
};
use crate::numerics::{Matrix, NodeId, ParamStore, Real, Tape};
use crate::propagation::{
    bpr_loss_node, enhancement_loss_node, lightgcn_nodes, BehaviorWeights, NormalizedAdjacency,
};
use crate::recommender::params::{ITEM_EMBEDDING, TARGET_PROJECTION, USER_EMBEDDING};
use crate::recommender::TrainingConfig;

/// The three sampler outputs feeding one optimizer step.
pub struct StepBatches<'a> {
    /// Ranking triples per behavior (may be empty for some behaviors).
    pub behavior_triples: Vec<&'a [BprTriple]>,
    /// Labeled merged-behavior pairs.
    pub merged: &'a [MergedSample],
    /// Target-behavior ranking triples.
    pub rec_triples: &'a [BprTriple],
}

/// Sorted unique users and items touched by the gated losses of a step
/// (merged samples plus target triples). Propagation always runs over the
/// full graph; these lists size the gate evaluation and factor extraction.
pub fn step_entities(batches: &StepBatches) -> (Vec<usize>, Vec<usize>) {
    let mut users: Vec<usize> = batches
        .merged
        .iter()
        .map(|s| s.user)
        .chain(batches.rec_triples.iter().map(|t| t.user))
        .collect();
    users.sort_unstable();
    users.dedup();
    let mut items: Vec<usize> = batches
        .merged
        .iter()
        .map(|s| s.item)
        .chain(
            batches
                .rec_triples
                .iter()
                .flat_map(|t| [t.pos_item, t.neg_item]),
        )
        .collect();
    items.sort_unstable();
    items.dedup();
    (users, items)
}

fn positions(sorted: &[usize], values: impl Iterator<Item = usize>) -> Vec<usize> {
    values
        .map(|v| {
            sorted
                .binary_search(&v)
                .expect("entity missing from step index")
        })
        .collect()
}

fn sorted_unique(values: impl Iterator<Item = usize>) -> Vec<usize> {
    let mut out: Vec<usize> = values.collect();
    out.sort_unstable();
    out.dedup();
    out
}

/// Loss component values of one assembled step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepLosses {
    pub enhancement: f64,
    pub log: f64,
    pub nce: f64,
    pub net: f64,
    pub rec: f64,
    pub regularization: f64,
    pub total: f64,
}

pub struct StepGraph<R: Real> {
    pub tape: Tape<R>,
    pub total: NodeId,
    pub enhancement: NodeId,
    pub log: NodeId,
    pub nce: NodeId,
    pub net: NodeId,
    pub rec: NodeId,
    pub regularization: NodeId,
    /// Users the gate was evaluated for this step, ascending.
    pub step_users: Vec<usize>,
    /// Per-user gate decisions, aligned with `step_users`.
    pub gate_decisions: Vec<GateDecision<R>>,
}

impl<R: Real> StepGraph<R> {
    pub fn losses(&self) -> StepLosses {
        StepLosses {
            enhancement: self.tape.scalar(self.enhancement).as_f64(),
            log: self.tape.scalar(self.log).as_f64(),
            nce: self.tape.scalar(self.nce).as_f64(),
            net: self.tape.scalar(self.net).as_f64(),
            rec: self.tape.scalar(self.rec).as_f64(),
            regularization: self.tape.scalar(self.regularization).as_f64(),
            total: self.tape.scalar(self.total).as_f64(),
        }
    }
}

/// Records the full forward pass of one step, returning every loss component
/// plus the combined objective
/// `enhancement + (log + alpha * nce) + rec + gamma * ||params||^2`.
///
/// `gate_noise` carries one standard-normal draw per (step user, expert)
/// during training; pass `None` for deterministic gating. A gradient check
/// must reuse one fixed draw across rebuilds.
pub fn build_step_graph<R: Real>(
    store: &ParamStore<R>,
    adjacencies: &[NormalizedAdjacency<R>],
    weights: &BehaviorWeights<R>,
    batches: &StepBatches,
    gate_noise: Option<&Matrix<R>>,
    config: &TrainingConfig,
) -> StepGraph<R> {
    assert_eq!(adjacencies.len(), batches.behavior_triples.len());
    let mut tape = Tape::new();
    let user_emb = tape.param(store, USER_EMBEDDING);
    let item_emb = tape.param(store, ITEM_EMBEDDING);

    // Per-behavior propagation from the shared initial embeddings.
    let mut behavior_embeddings = Vec::with_capacity(adjacencies.len());
    for adjacency in adjacencies {
        behavior_embeddings.push(lightgcn_nodes(
            &mut tape,
            adjacency,
            user_emb,
            item_emb,
            config.gcn_layers,
        ));
    }

    // Frequency-weighted aggregation.
    let mut agg_users: Option<NodeId> = None;
    let mut agg_items: Option<NodeId> = None;
    for (m, &(pu, qi)) in behavior_embeddings.iter().enumerate() {
        let su = tape.scale_rows_const(pu, Arc::new(weights.user_column(m)));
        let si = tape.scale_rows_const(qi, Arc::new(weights.item_column(m)));
        agg_users = Some(match agg_users {
            Some(prev) => tape.add(prev, su),
            None => su,
        });
        agg_items = Some(match agg_items {
            Some(prev) => tape.add(prev, si),
            None => si,
        });
    }
    let enhanced_users = agg_users.expect("at least one behavior");
    let enhanced_items = agg_items.expect("at least one behavior");

    // Enhancement objective over per-behavior embeddings.
    let enh_inputs: Vec<(NodeId, NodeId, &[BprTriple])> = behavior_embeddings
        .iter()
        .zip(&batches.behavior_triples)
        .map(|(&(pu, qi), triples)| (pu, qi, *triples))
        .collect();
    let enhancement = enhancement_loss_node(&mut tape, &enh_inputs);

    let (step_users, step_items) = step_entities(batches);
    let mut gate_decisions = Vec::new();
    let (log, nce, rec) = if step_users.is_empty() {
        let zero = tape.constant_scalar(R::zero());
        (zero, zero, zero)
    } else {
        let gate_input = tape.gather_rows(enhanced_users, Arc::new(step_users.clone()));
        let gate_weight = tape.param(store, GATE_WEIGHT);
        let gate_noise_weight = tape.param(store, GATE_NOISE_WEIGHT);
        if let Some(noise) = gate_noise {
            assert_eq!(
                noise.shape(),
                (step_users.len(), config.num_experts),
                "gate noise shape mismatch"
            );
        }
        let gate = gate_nodes(&mut tape, gate_input, gate_weight, gate_noise_weight, gate_noise);
        gate_decisions = gate.decisions;

        let expert_nodes: Vec<ExpertNodes> = (0..config.num_experts)
            .map(|k| ExpertNodes::from_store(&mut tape, store, k))
            .collect();
        // Pre-gating outputs for every expert over the step users.
        let full_user_factors: Vec<NodeId> = expert_nodes
            .iter()
            .map(|e| expert_forward_node(&mut tape, gate_input, e))
            .collect();
        // Gate values zero out unselected experts row by row.
        let gated_user_factors: Vec<NodeId> = full_user_factors
            .iter()
            .enumerate()
            .map(|(k, &f)| {
                let column = tape.select_column(gate.gated, k);
                tape.scale_rows_by_col(f, column)
            })
            .collect();

        let item_input = tape.gather_rows(enhanced_items, Arc::new(step_items.clone()));
        let item_factors: Vec<NodeId> = expert_nodes
            .iter()
            .map(|e| expert_forward_node(&mut tape, item_input, e))
            .collect();

        // Merged-behavior interaction loss.
        let log = if batches.merged.is_empty() {
            tape.constant_scalar(R::zero())
        } else {
            let user_rows = Arc::new(positions(
                &step_users,
                batches.merged.iter().map(|s| s.user),
            ));
            let item_rows = Arc::new(positions(
                &step_items,
                batches.merged.iter().map(|s| s.item),
            ));
            let sample_users: Vec<NodeId> = gated_user_factors
                .iter()
                .map(|&g| tape.gather_rows(g, user_rows.clone()))
                .collect();
            let sample_items: Vec<NodeId> = item_factors
                .iter()
                .map(|&v| tape.gather_rows(v, item_rows.clone()))
                .collect();
            let labels: Arc<Vec<R>> = Arc::new(
                batches
                    .merged
                    .iter()
                    .map(|s| if s.label { R::one() } else { R::zero() })
                    .collect(),
            );
            interaction_loss_node(&mut tape, &sample_users, &sample_items, labels)
        };

        // Contrastive loss over the merged batch's unique entities using
        // pre-gating outputs, so every expert is constrained.
        let nce = if batches.merged.is_empty() {
            tape.constant_scalar(R::zero())
        } else {
            let nce_users = sorted_unique(batches.merged.iter().map(|s| s.user));
            let nce_items = sorted_unique(batches.merged.iter().map(|s| s.item));
            let user_rows = Arc::new(positions(&step_users, nce_users.into_iter()));
            let item_rows = Arc::new(positions(&step_items, nce_items.into_iter()));
            let user_nodes: Vec<NodeId> = full_user_factors
                .iter()
                .map(|&f| tape.gather_rows(f, user_rows.clone()))
                .collect();
            let item_nodes: Vec<NodeId> = item_factors
                .iter()
                .map(|&v| tape.gather_rows(v, item_rows.clone()))
                .collect();
            let user_side = contrastive_side_node(&mut tape, &user_nodes, config.temperature);
            let item_side = contrastive_side_node(&mut tape, &item_nodes, config.temperature);
            tape.add(user_side, item_side)
        };

        // Target-behavior ranking loss over projected gated factors.
        let rec = if batches.rec_triples.is_empty() {
            tape.constant_scalar(R::zero())
        } else {
            let user_rows = Arc::new(positions(
                &step_users,
                batches.rec_triples.iter().map(|t| t.user),
            ));
            let pos_rows = Arc::new(positions(
                &step_items,
                batches.rec_triples.iter().map(|t| t.pos_item),
            ));
            let neg_rows = Arc::new(positions(
                &step_items,
                batches.rec_triples.iter().map(|t| t.neg_item),
            ));
            let projection = tape.param(store, TARGET_PROJECTION);
            let mut pos_scores: Option<NodeId> = None;
            let mut neg_scores: Option<NodeId> = None;
            for k in 0..config.num_experts {
                let users_k = tape.gather_rows(gated_user_factors[k], user_rows.clone());
                let projected = tape.matmul(users_k, projection);
                let pos_items = tape.gather_rows(item_factors[k], pos_rows.clone());
                let neg_items = tape.gather_rows(item_factors[k], neg_rows.clone());
                let dp = tape.rowwise_dot(projected, pos_items);
                let dn = tape.rowwise_dot(projected, neg_items);
                pos_scores = Some(match pos_scores {
                    Some(prev) => tape.add(prev, dp),
                    None => dp,
                });
                neg_scores = Some(match neg_scores {
                    Some(prev) => tape.add(prev, dn),
                    None => dn,
                });
            }
            bpr_loss_node(&mut tape, pos_scores.unwrap(), neg_scores.unwrap())
        };
        (log, nce, rec)
    };

    let scaled_nce = tape.scale(nce, R::from_f64(config.alpha));
    let net = tape.add(log, scaled_nce);

    // L2 regularizer over every parameter in the store.
    let names: Vec<String> = store.names().map(String::from).collect();
    let mut reg_acc: Option<NodeId> = None;
    for name in &names {
        let p = tape.param(store, name);
        let sq = tape.mul(p, p);
        let total = tape.sum_all(sq);
        reg_acc = Some(match reg_acc {
            Some(prev) => tape.add(prev, total),
            None => total,
        });
    }
    let regularization = tape.scale(reg_acc.expect("non-empty store"), R::from_f64(config.gamma));

    let partial = tape.add(enhancement, net);
    let partial = tape.add(partial, rec);
    let total = tape.add(partial, regularization);

    StepGraph {
        tape,
        total,
        enhancement,
        log,
        nce,
        net,
        rec,
        regularization,
        step_users,
        gate_decisions,
    }
}

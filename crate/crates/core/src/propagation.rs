//! Embedding enhancement network: per-behavior graph propagation with
//! symmetric normalization, layer aggregation, per-behavior ranking losses,
//! and interaction-frequency weighted aggregation across behaviors.

use std::sync::Arc;

use thiserror::Error;

use crate::dataset::{BehaviorMatrix, BprTriple, Dataset};
use crate::numerics::{Matrix, NodeId, Real, SparseBipartite, Tape};

#[derive(Debug, Error)]
pub enum PropagationError {
    #[error("embedding width mismatch: users {users}, items {items}")]
    WidthMismatch { users: usize, items: usize },
    #[error("embedding rows mismatch: expected {expected}, got {got}")]
    RowMismatch { expected: usize, got: usize },
}

/// Bipartite interaction graph with symmetric normalization: every edge
/// `(u, i)` carries the coefficient `1 / (sqrt(|N_u|) * sqrt(|N_i|))`.
pub struct NormalizedAdjacency<R: Real> {
    pub behavior_id: usize,
    graph: Arc<SparseBipartite<R>>,
}

impl<R: Real> NormalizedAdjacency<R> {
    pub fn graph(&self) -> &Arc<SparseBipartite<R>> {
        &self.graph
    }

    pub fn edge_count(&self) -> usize {
        self.graph.edge_count()
    }

    /// `(user, item, coefficient)` edges.
    pub fn edges(&self) -> impl Iterator<Item = (u32, u32, R)> + '_ {
        self.graph.edges()
    }
}

/// Builds the normalized adjacency of one behavior.
pub fn build_adjacency<R: Real>(matrix: &BehaviorMatrix) -> NormalizedAdjacency<R> {
    let set = &matrix.interactions;
    let mut edges = Vec::with_capacity(set.len());
    for (user, item) in set.pairs() {
        let du = R::from_f64(set.user_count(user) as f64);
        let di = R::from_f64(set.item_count(item) as f64);
        let coeff = R::one() / (du.sqrt() * di.sqrt());
        edges.push((user as u32, item as u32, coeff));
    }
    NormalizedAdjacency {
        behavior_id: matrix.behavior_id,
        graph: Arc::new(SparseBipartite::from_edges(
            set.num_users(),
            set.num_items(),
            &edges,
        )),
    }
}

/// One neighborhood-aggregation step: each user embedding becomes the
/// coefficient-weighted sum of its neighbors' item embeddings and vice
/// versa. Isolated nodes map to the zero vector.
pub fn propagate_layer<R: Real>(
    adjacency: &NormalizedAdjacency<R>,
    user_emb: &Matrix<R>,
    item_emb: &Matrix<R>,
) -> Result<(Matrix<R>, Matrix<R>), PropagationError> {
    if user_emb.cols() != item_emb.cols() {
        return Err(PropagationError::WidthMismatch {
            users: user_emb.cols(),
            items: item_emb.cols(),
        });
    }
    if user_emb.rows() != adjacency.graph.left_count() {
        return Err(PropagationError::RowMismatch {
            expected: adjacency.graph.left_count(),
            got: user_emb.rows(),
        });
    }
    if item_emb.rows() != adjacency.graph.right_count() {
        return Err(PropagationError::RowMismatch {
            expected: adjacency.graph.right_count(),
            got: item_emb.rows(),
        });
    }
    let next_users = adjacency.graph.apply_left(item_emb);
    let next_items = adjacency.graph.apply_right(user_emb);
    Ok((next_users, next_items))
}

/// Runs `layers` propagation steps and returns the layer sums including
/// layer 0 (the raw embeddings).
pub fn run_lightgcn<R: Real>(
    adjacency: &NormalizedAdjacency<R>,
    user_emb: &Matrix<R>,
    item_emb: &Matrix<R>,
    layers: usize,
) -> Result<(Matrix<R>, Matrix<R>), PropagationError> {
    let mut sum_users = user_emb.clone();
    let mut sum_items = item_emb.clone();
    let mut current_users = user_emb.clone();
    let mut current_items = item_emb.clone();
    for _ in 0..layers {
        let (next_users, next_items) =
            propagate_layer(adjacency, &current_users, &current_items)?;
        sum_users = sum_users.add(&next_users);
        sum_items = sum_items.add(&next_items);
        current_users = next_users;
        current_items = next_items;
    }
    Ok((sum_users, sum_items))
}

/// Tape version of [`run_lightgcn`]; gradients flow back to the embedding
/// leaves through every layer.
pub fn lightgcn_nodes<R: Real>(
    tape: &mut Tape<R>,
    adjacency: &NormalizedAdjacency<R>,
    user_node: NodeId,
    item_node: NodeId,
    layers: usize,
) -> (NodeId, NodeId) {
    let mut sum_users = user_node;
    let mut sum_items = item_node;
    let mut current_users = user_node;
    let mut current_items = item_node;
    for _ in 0..layers {
        let next_users = tape.propagate_to_left(adjacency.graph.clone(), current_items);
        let next_items = tape.propagate_to_right(adjacency.graph.clone(), current_users);
        sum_users = tape.add(sum_users, next_users);
        sum_items = tape.add(sum_items, next_items);
        current_users = next_users;
        current_items = next_items;
    }
    (sum_users, sum_items)
}

/// Per-behavior mixing weights for users and items.
pub struct BehaviorWeights<R: Real> {
    /// `num_users x num_behaviors`, rows sum to 1.
    pub users: Matrix<R>,
    /// `num_items x num_behaviors`, rows sum to 1.
    pub items: Matrix<R>,
}

impl<R: Real> BehaviorWeights<R> {
    pub fn user_column(&self, behavior: usize) -> Vec<R> {
        (0..self.users.rows())
            .map(|u| self.users.get(u, behavior))
            .collect()
    }

    pub fn item_column(&self, behavior: usize) -> Vec<R> {
        (0..self.items.rows())
            .map(|i| self.items.get(i, behavior))
            .collect()
    }
}

/// Interaction-frequency weights: behavior `m` receives
/// `n^m / sum_j n^j` for each entity. Entities with no interactions anywhere
/// fall back to uniform `1/M` so their aggregate embedding stays non-degenerate.
pub fn behavior_weights<R: Real>(dataset: &Dataset) -> BehaviorWeights<R> {
    let m = dataset.num_behaviors();
    let uniform = R::from_f64(1.0 / m as f64);
    let mut users = Matrix::zeros(dataset.num_users, m);
    let mut items = Matrix::zeros(dataset.num_items, m);

    for user in 0..dataset.num_users {
        let counts: Vec<usize> = dataset
            .behaviors
            .iter()
            .map(|b| b.interactions.user_count(user))
            .collect();
        let total: usize = counts.iter().sum();
        for (b, &c) in counts.iter().enumerate() {
            let w = if total == 0 {
                uniform
            } else {
                R::from_f64(c as f64 / total as f64)
            };
            users.set(user, b, w);
        }
    }
    for item in 0..dataset.num_items {
        let counts: Vec<usize> = dataset
            .behaviors
            .iter()
            .map(|b| b.interactions.item_count(item))
            .collect();
        let total: usize = counts.iter().sum();
        for (b, &c) in counts.iter().enumerate() {
            let w = if total == 0 {
                uniform
            } else {
                R::from_f64(c as f64 / total as f64)
            };
            items.set(item, b, w);
        }
    }
    BehaviorWeights { users, items }
}

/// Weighted sum of the per-behavior embeddings.
pub fn aggregate_behaviors<R: Real>(
    per_behavior_users: &[Matrix<R>],
    per_behavior_items: &[Matrix<R>],
    weights: &BehaviorWeights<R>,
) -> (Matrix<R>, Matrix<R>) {
    assert_eq!(per_behavior_users.len(), per_behavior_items.len());
    assert!(!per_behavior_users.is_empty());
    let mut agg_users = Matrix::zeros(
        per_behavior_users[0].rows(),
        per_behavior_users[0].cols(),
    );
    let mut agg_items = Matrix::zeros(
        per_behavior_items[0].rows(),
        per_behavior_items[0].cols(),
    );
    for (b, (pu, qi)) in per_behavior_users
        .iter()
        .zip(per_behavior_items.iter())
        .enumerate()
    {
        for u in 0..pu.rows() {
            let w = weights.users.get(u, b);
            for (dst, &src) in agg_users.row_mut(u).iter_mut().zip(pu.row(u)) {
                *dst = *dst + w * src;
            }
        }
        for i in 0..qi.rows() {
            let w = weights.items.get(i, b);
            for (dst, &src) in agg_items.row_mut(i).iter_mut().zip(qi.row(i)) {
                *dst = *dst + w * src;
            }
        }
    }
    (agg_users, agg_items)
}

/// Per-behavior propagated embeddings plus the frequency-weighted aggregates.
pub struct EnhancedEmbeddings<R: Real> {
    pub per_behavior_users: Vec<Matrix<R>>,
    pub per_behavior_items: Vec<Matrix<R>>,
    pub weights: BehaviorWeights<R>,
    /// Aggregated user embeddings, `num_users x d`.
    pub users: Matrix<R>,
    /// Aggregated item embeddings, `num_items x d`.
    pub items: Matrix<R>,
}

/// Full plain-value enhancement pass: propagate each behavior from the shared
/// initial embeddings, then aggregate with frequency weights.
pub fn enhance<R: Real>(
    adjacencies: &[NormalizedAdjacency<R>],
    weights: BehaviorWeights<R>,
    user_emb: &Matrix<R>,
    item_emb: &Matrix<R>,
    layers: usize,
) -> Result<EnhancedEmbeddings<R>, PropagationError> {
    let mut per_behavior_users = Vec::with_capacity(adjacencies.len());
    let mut per_behavior_items = Vec::with_capacity(adjacencies.len());
    for adjacency in adjacencies {
        let (pu, qi) = run_lightgcn(adjacency, user_emb, item_emb, layers)?;
        per_behavior_users.push(pu);
        per_behavior_items.push(qi);
    }
    let (users, items) =
        aggregate_behaviors(&per_behavior_users, &per_behavior_items, &weights);
    Ok(EnhancedEmbeddings {
        per_behavior_users,
        per_behavior_items,
        weights,
        users,
        items,
    })
}

/// Pairwise ranking loss node over one behavior's propagated embeddings:
/// `mean(softplus(neg_score - pos_score))`, the stable form of
/// `-mean(ln(sigmoid(pos - neg)))`.
pub fn bpr_loss_node<R: Real>(tape: &mut Tape<R>, pos: NodeId, neg: NodeId) -> NodeId {
    let margin = tape.sub(neg, pos);
    let losses = tape.softplus(margin);
    tape.mean_all(losses)
}

/// Adds one behavior's ranking loss to the tape from its propagated
/// embeddings and sampled triples.
pub fn behavior_loss_node<R: Real>(
    tape: &mut Tape<R>,
    user_node: NodeId,
    item_node: NodeId,
    triples: &[BprTriple],
) -> Option<NodeId> {
    if triples.is_empty() {
        return None;
    }
    let users = Arc::new(triples.iter().map(|t| t.user).collect::<Vec<_>>());
    let pos = Arc::new(triples.iter().map(|t| t.pos_item).collect::<Vec<_>>());
    let neg = Arc::new(triples.iter().map(|t| t.neg_item).collect::<Vec<_>>());
    let u = tape.gather_rows(user_node, users);
    let i = tape.gather_rows(item_node, pos);
    let j = tape.gather_rows(item_node, neg);
    let pos_scores = tape.rowwise_dot(u, i);
    let neg_scores = tape.rowwise_dot(u, j);
    Some(bpr_loss_node(tape, pos_scores, neg_scores))
}

/// Enhancement objective: per-behavior batch-averaged ranking losses combined
/// with a uniform `1/M` weight. Behaviors with no triples contribute zero.
pub fn enhancement_loss_node<R: Real>(
    tape: &mut Tape<R>,
    per_behavior: &[(NodeId, NodeId, &[BprTriple])],
) -> NodeId {
    let m = per_behavior.len();
    let mut acc: Option<NodeId> = None;
    let mut skipped = 0usize;
    for &(user_node, item_node, triples) in per_behavior {
        match behavior_loss_node(tape, user_node, item_node, triples) {
            Some(loss) => {
                acc = Some(match acc {
                    Some(prev) => tape.add(prev, loss),
                    None => loss,
                });
            }
            None => skipped += 1,
        }
    }
    if skipped > 0 {
        log::warn!("{skipped} behaviors had no triples this step; they contribute zero loss");
    }
    match acc {
        Some(total) => tape.scale(total, R::from_f64(1.0 / m as f64)),
        None => tape.constant_scalar(R::zero()),
    }
}

/// Plain-value enhancement loss over already-propagated embeddings.
pub fn enhancement_loss<R: Real>(
    per_behavior_users: &[Matrix<R>],
    per_behavior_items: &[Matrix<R>],
    per_behavior_triples: &[Vec<BprTriple>],
) -> R {
    let mut tape = Tape::new();
    let mut inputs = Vec::new();
    for ((pu, qi), triples) in per_behavior_users
        .iter()
        .zip(per_behavior_items)
        .zip(per_behavior_triples)
    {
        let user_node = tape.constant(pu.clone());
        let item_node = tape.constant(qi.clone());
        inputs.push((user_node, item_node, triples.as_slice()));
    }
    let loss = enhancement_loss_node(&mut tape, &inputs);
    tape.scalar(loss)
}

//! Gating expert network: noisy adaptive top-k gating, per-expert factor
//! extraction, the contrastive independence/consistency objective, and the
//! merged-behavior interaction objective.

use std::sync::Arc;

use thiserror::Error;

use crate::numerics::{softmax, softplus, tanh_act, Matrix, NodeId, ParamStore, Real, Tape};

#[derive(Debug, Error)]
pub enum MoeError {
    #[error("temperature must be positive, got {0}")]
    InvalidTemperature(f64),
    #[error("alpha must lie in (0, 1), got {0}")]
    InvalidAlpha(f64),
}

pub const GATE_WEIGHT: &str = "gate_weight";
pub const GATE_NOISE_WEIGHT: &str = "gate_noise_weight";

pub fn expert_hidden_weight(k: usize) -> String {
    format!("expert_{k}_hidden_weight")
}
pub fn expert_hidden_bias(k: usize) -> String {
    format!("expert_{k}_hidden_bias")
}
pub fn expert_output_weight(k: usize) -> String {
    format!("expert_{k}_output_weight")
}
pub fn expert_output_bias(k: usize) -> String {
    format!("expert_{k}_output_bias")
}

/// Gate parameters: `K x d` logit weights and `K x d` noise-magnitude weights.
pub struct GateParams<'a, R: Real> {
    pub weight: &'a Matrix<R>,
    pub noise_weight: &'a Matrix<R>,
}

impl<'a, R: Real> GateParams<'a, R> {
    pub fn from_store(store: &'a ParamStore<R>) -> Self {
        GateParams {
            weight: store.param(GATE_WEIGHT),
            noise_weight: store.param(GATE_NOISE_WEIGHT),
        }
    }

    pub fn num_experts(&self) -> usize {
        self.weight.rows()
    }
}

/// One expert's two-layer network: `out = W2 tanh(W1 x + b1) + b2` with a
/// hidden width of exactly `d/2`.
pub struct ExpertParams<'a, R: Real> {
    pub hidden_weight: &'a Matrix<R>,
    pub hidden_bias: &'a Matrix<R>,
    pub output_weight: &'a Matrix<R>,
    pub output_bias: &'a Matrix<R>,
}

impl<'a, R: Real> ExpertParams<'a, R> {
    pub fn from_store(store: &'a ParamStore<R>, k: usize) -> Self {
        ExpertParams {
            hidden_weight: store.param(&expert_hidden_weight(k)),
            hidden_bias: store.param(&expert_hidden_bias(k)),
            output_weight: store.param(&expert_output_weight(k)),
            output_bias: store.param(&expert_output_bias(k)),
        }
    }

    pub fn all_from_store(store: &'a ParamStore<R>, num_experts: usize) -> Vec<Self> {
        (0..num_experts)
            .map(|k| Self::from_store(store, k))
            .collect()
    }
}

/// Outcome of one gate evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct GateDecision<R: Real> {
    /// Softmax probabilities over experts; sums to 1 within 1e-6.
    pub probabilities: Vec<R>,
    /// Unrenormalized probabilities on selected entries, zero elsewhere.
    pub gate_values: Vec<R>,
    /// Ascending indices of the selected experts; never empty.
    pub selected: Vec<usize>,
    /// True when no probability strictly exceeded the threshold and the
    /// argmax fallback fired.
    pub fallback: bool,
}

/// Applies the adaptive threshold to softmax probabilities.
///
/// The threshold is the mean of the probability vector, which for softmax
/// output is exactly `1/K`; selection keeps entries strictly above it. When
/// nothing clears the threshold (exactly uniform probabilities), the argmax
/// is selected, ties broken toward the lowest index, so the selected set is
/// never empty.
pub fn select_experts<R: Real>(probabilities: &[R]) -> GateDecision<R> {
    let k = probabilities.len();
    assert!(k > 0, "gate over zero experts");
    let sum: R = probabilities.iter().copied().sum();
    assert!(
        (sum - R::one()).abs().as_f64() <= 1e-6,
        "gate input is not a probability vector (sum {sum})"
    );
    let threshold = R::one() / R::from_f64(k as f64);

    let mut selected: Vec<usize> = (0..k).filter(|&i| probabilities[i] > threshold).collect();
    let fallback = selected.is_empty();
    if fallback {
        let mut best = 0usize;
        for i in 1..k {
            if probabilities[i] > probabilities[best] {
                best = i;
            }
        }
        selected.push(best);
    }
    let mut gate_values = vec![R::zero(); k];
    for &i in &selected {
        gate_values[i] = probabilities[i];
    }
    GateDecision {
        probabilities: probabilities.to_vec(),
        gate_values,
        selected,
        fallback,
    }
}

/// Evaluates the gate for one entity. `noise` carries a standard-normal draw
/// per expert during training (scaled by `softplus(noise_weight . x)`); pass
/// `None` for deterministic evaluation.
pub fn gate_forward<R: Real>(
    input: &[R],
    params: &GateParams<R>,
    noise: Option<&[R]>,
) -> GateDecision<R> {
    let k = params.num_experts();
    debug_assert_eq!(params.weight.cols(), input.len());
    let mut logits = Vec::with_capacity(k);
    for row in 0..k {
        let mut logit = dot(params.weight.row(row), input);
        if let Some(draw) = noise {
            let magnitude = softplus(dot(params.noise_weight.row(row), input));
            logit = logit + draw[row] * magnitude;
        }
        logits.push(logit);
    }
    let probabilities = softmax(&logits).expect("gate softmax over empty logits");
    select_experts(&probabilities)
}

/// One expert's forward pass for a single entity.
pub fn expert_forward<R: Real>(input: &[R], expert: &ExpertParams<R>) -> Vec<R> {
    let hidden_dim = expert.hidden_weight.rows();
    let mut hidden = Vec::with_capacity(hidden_dim);
    for h in 0..hidden_dim {
        let lin = dot(expert.hidden_weight.row(h), input) + expert.hidden_bias.get(0, h);
        hidden.push(tanh_act(lin));
    }
    let out_dim = expert.output_weight.rows();
    let mut out = Vec::with_capacity(out_dim);
    for o in 0..out_dim {
        out.push(dot(expert.output_weight.row(o), &hidden) + expert.output_bias.get(0, o));
    }
    out
}

fn dot<R: Real>(a: &[R], b: &[R]) -> R {
    debug_assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(&x, &y)| x * y)
        .fold(R::zero(), |acc, v| acc + v)
}

/// How an entity's factors were gated.
#[derive(Debug, Clone, PartialEq)]
pub enum Gating<R: Real> {
    /// User-side gating with an explicit decision.
    User(GateDecision<R>),
    /// Item-side extraction: every expert participates with gate value 1.
    AllExperts,
}

/// Per-expert factor vectors of one entity.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorSet<R: Real> {
    pub owner: usize,
    /// `K` factor vectors of width `d`; for users, unselected experts hold
    /// exact zero vectors.
    pub factors: Vec<Vec<R>>,
    pub gating: Gating<R>,
}

impl<R: Real> FactorSet<R> {
    /// Ascending indices of the experts that participate in scoring.
    pub fn selected(&self) -> Vec<usize> {
        match &self.gating {
            Gating::User(decision) => decision.selected.clone(),
            Gating::AllExperts => (0..self.factors.len()).collect(),
        }
    }

    pub fn num_experts(&self) -> usize {
        self.factors.len()
    }
}

/// Gated user factors: `e^k = t_k * E_k(x)` for selected experts only; the
/// unselected experts are never evaluated and yield exact zero vectors.
pub fn extract_user_factors<R: Real>(
    owner: usize,
    input: &[R],
    gate: &GateParams<R>,
    experts: &[ExpertParams<R>],
    noise: Option<&[R]>,
) -> FactorSet<R> {
    let decision = gate_forward(input, gate, noise);
    let dim = input.len();
    let mut factors = vec![vec![R::zero(); dim]; experts.len()];
    for &k in &decision.selected {
        let raw = expert_forward(input, &experts[k]);
        let t = decision.gate_values[k];
        factors[k] = raw.into_iter().map(|v| t * v).collect();
    }
    FactorSet {
        owner,
        factors,
        gating: Gating::User(decision),
    }
}

/// Item factors: every expert is applied with a fixed gate of 1, so the
/// gating network is never consulted on the item side.
pub fn extract_item_factors<R: Real>(
    owner: usize,
    input: &[R],
    experts: &[ExpertParams<R>],
) -> FactorSet<R> {
    FactorSet {
        owner,
        factors: all_expert_outputs(input, experts),
        gating: Gating::AllExperts,
    }
}

/// Raw (pre-gating) outputs of every expert for one entity. Feeds item
/// factor extraction, the contrastive batch construction, and factor export.
pub fn all_expert_outputs<R: Real>(input: &[R], experts: &[ExpertParams<R>]) -> Vec<Vec<R>> {
    experts.iter().map(|e| expert_forward(input, e)).collect()
}

// ---------------------------------------------------------------------------
// Tape builders
// ---------------------------------------------------------------------------

/// Tape handles for one expert's parameters.
pub struct ExpertNodes {
    pub hidden_weight: NodeId,
    pub hidden_bias: NodeId,
    pub output_weight: NodeId,
    pub output_bias: NodeId,
}

impl ExpertNodes {
    pub fn from_store<R: Real>(tape: &mut Tape<R>, store: &ParamStore<R>, k: usize) -> Self {
        ExpertNodes {
            hidden_weight: tape.param(store, &expert_hidden_weight(k)),
            hidden_bias: tape.param(store, &expert_hidden_bias(k)),
            output_weight: tape.param(store, &expert_output_weight(k)),
            output_bias: tape.param(store, &expert_output_bias(k)),
        }
    }
}

/// Batched expert forward: `tanh(X W1^T + b1) W2^T + b2` over a `B x d` input.
pub fn expert_forward_node<R: Real>(
    tape: &mut Tape<R>,
    input: NodeId,
    expert: &ExpertNodes,
) -> NodeId {
    let w1t = tape.transpose(expert.hidden_weight);
    let lin = tape.matmul(input, w1t);
    let lin = tape.add_row_broadcast(lin, expert.hidden_bias);
    let hidden = tape.tanh(lin);
    let w2t = tape.transpose(expert.output_weight);
    let out = tape.matmul(hidden, w2t);
    tape.add_row_broadcast(out, expert.output_bias)
}

/// Gate evaluation over a `B x d` batch on the tape.
pub struct GateNodes<R: Real> {
    /// `B x K` softmax probabilities.
    pub probabilities: NodeId,
    /// `B x K` gate values after thresholding (zeros on unselected experts).
    pub gated: NodeId,
    /// Per-row decisions mirroring the node values.
    pub decisions: Vec<GateDecision<R>>,
}

/// Builds the noisy adaptive gate on the tape. The thresholding mask is a
/// constant of the forward pass (selection is piecewise constant), while the
/// standard-normal `noise` draw scales the differentiable softplus magnitude.
pub fn gate_nodes<R: Real>(
    tape: &mut Tape<R>,
    input: NodeId,
    gate_weight: NodeId,
    gate_noise_weight: NodeId,
    noise: Option<&Matrix<R>>,
) -> GateNodes<R> {
    let wt = tape.transpose(gate_weight);
    let mut logits = tape.matmul(input, wt);
    if let Some(draw) = noise {
        let nt = tape.transpose(gate_noise_weight);
        let noise_lin = tape.matmul(input, nt);
        let magnitude = tape.softplus(noise_lin);
        let draw_node = tape.constant(draw.clone());
        let noise_term = tape.mul(draw_node, magnitude);
        logits = tape.add(logits, noise_term);
    }
    let probabilities = tape.softmax_rows(logits);

    let prob_values = tape.value(probabilities).clone();
    let mut mask = Matrix::zeros(prob_values.rows(), prob_values.cols());
    let mut decisions = Vec::with_capacity(prob_values.rows());
    for r in 0..prob_values.rows() {
        let decision = select_experts(prob_values.row(r));
        for &k in &decision.selected {
            mask.set(r, k, R::one());
        }
        decisions.push(decision);
    }
    let mask_node = tape.constant(mask);
    let gated = tape.mul(probabilities, mask_node);
    GateNodes {
        probabilities,
        gated,
        decisions,
    }
}

/// One side (users or items) of the contrastive objective over per-expert
/// factor matrices: for every entity pair `(a, b)` and expert `k`, the term
/// is `-log(S(e_a^k, e_b^k) / sum_j S(e_a^j, e_b^k))` with
/// `S(x, y) = exp(<x, y> / tau)`; the result is the mean over all
/// `B^2 * K` terms. In-batch pairs include `a == b`.
#[allow(clippy::needless_range_loop)]
pub fn contrastive_side_node<R: Real>(
    tape: &mut Tape<R>,
    factors: &[NodeId],
    tau: f64,
) -> NodeId {
    let num_experts = factors.len();
    assert!(num_experts >= 2, "contrastive loss needs at least 2 experts");
    if tape.value(factors[0]).rows() == 0 {
        return tape.constant_scalar(R::zero());
    }
    let inv_tau = R::from_f64(1.0 / tau);
    let transposed: Vec<NodeId> = factors.iter().map(|&f| tape.transpose(f)).collect();
    // scaled[j][k][a][b] = <e_a^j, e_b^k> / tau
    let mut scaled = vec![Vec::with_capacity(num_experts); num_experts];
    for j in 0..num_experts {
        for k in 0..num_experts {
            let dots = tape.matmul(factors[j], transposed[k]);
            scaled[j].push(tape.scale(dots, inv_tau));
        }
    }
    let mut acc: Option<NodeId> = None;
    for k in 0..num_experts {
        let denominator_inputs: Vec<NodeId> = (0..num_experts).map(|j| scaled[j][k]).collect();
        let lse = tape.log_sum_exp_across(denominator_inputs);
        let diff = tape.sub(lse, scaled[k][k]);
        let mean = tape.mean_all(diff);
        acc = Some(match acc {
            Some(prev) => tape.add(prev, mean),
            None => mean,
        });
    }
    let total = acc.expect("at least one expert");
    tape.scale(total, R::from_f64(1.0 / num_experts as f64))
}

/// Contrastive objective over both entity sides (user term plus item term).
///
/// Factor sets must carry the full per-expert outputs (pre-gating), so the
/// independence and consistency constraints reach every expert.
pub fn contrastive_loss<R: Real>(
    user_factors: &[FactorSet<R>],
    item_factors: &[FactorSet<R>],
    tau: f64,
) -> Result<R, MoeError> {
    if tau <= 0.0 {
        return Err(MoeError::InvalidTemperature(tau));
    }
    let mut tape = Tape::new();
    let user_nodes = stack_factor_nodes(&mut tape, user_factors);
    let item_nodes = stack_factor_nodes(&mut tape, item_factors);
    let user_side = contrastive_side_node(&mut tape, &user_nodes, tau);
    let item_side = contrastive_side_node(&mut tape, &item_nodes, tau);
    let total = tape.add(user_side, item_side);
    Ok(tape.scalar(total))
}

/// Stacks `batch[b].factors[k]` into K constant `B x d` matrices.
fn stack_factor_nodes<R: Real>(tape: &mut Tape<R>, batch: &[FactorSet<R>]) -> Vec<NodeId> {
    let num_experts = batch.first().map_or(2, |f| f.num_experts());
    (0..num_experts)
        .map(|k| {
            let rows: Vec<Vec<R>> = batch.iter().map(|f| f.factors[k].clone()).collect();
            let matrix = if rows.is_empty() {
                Matrix::zeros(0, 0)
            } else {
                Matrix::from_rows(&rows)
            };
            tape.constant(matrix)
        })
        .collect()
}

/// Merged-behavior interaction objective on the tape: per sample, the logit
/// is the sum over experts of `<user factor, item factor>` (gated user
/// factors restrict the sum to the selected set), and the loss is the
/// batch-averaged binary cross-entropy against the labels.
pub fn interaction_loss_node<R: Real>(
    tape: &mut Tape<R>,
    user_factors: &[NodeId],
    item_factors: &[NodeId],
    labels: Arc<Vec<R>>,
) -> NodeId {
    assert_eq!(user_factors.len(), item_factors.len());
    if labels.is_empty() {
        return tape.constant_scalar(R::zero());
    }
    let mut logits: Option<NodeId> = None;
    for (&u, &i) in user_factors.iter().zip(item_factors) {
        let dots = tape.rowwise_dot(u, i);
        logits = Some(match logits {
            Some(prev) => tape.add(prev, dots),
            None => dots,
        });
    }
    let logits = logits.expect("at least one expert");
    let losses = tape.bce_with_logits(logits, labels);
    tape.mean_all(losses)
}

/// Plain-value interaction loss over factor-set batches.
pub fn interaction_loss<R: Real>(batch: &[(FactorSet<R>, FactorSet<R>, bool)]) -> R {
    if batch.is_empty() {
        return R::zero();
    }
    let num_experts = batch[0].0.num_experts();
    let mut tape = Tape::new();
    let user_sets: Vec<FactorSet<R>> = batch.iter().map(|(u, _, _)| u.clone()).collect();
    let item_sets: Vec<FactorSet<R>> = batch.iter().map(|(_, i, _)| i.clone()).collect();
    let user_nodes = stack_factor_nodes(&mut tape, &user_sets);
    let item_nodes = stack_factor_nodes(&mut tape, &item_sets);
    debug_assert_eq!(user_nodes.len(), num_experts);
    let labels: Arc<Vec<R>> = Arc::new(
        batch
            .iter()
            .map(|(_, _, y)| if *y { R::one() } else { R::zero() })
            .collect(),
    );
    let loss = interaction_loss_node(&mut tape, &user_nodes, &item_nodes, labels);
    tape.scalar(loss)
}

/// Gating-expert-network objective: `L_log + alpha * L_nce`.
pub fn net_loss<R: Real>(log_loss: R, nce_loss: R, alpha: f64) -> Result<R, MoeError> {
    validate_alpha(alpha)?;
    Ok(log_loss + R::from_f64(alpha) * nce_loss)
}

pub fn validate_alpha(alpha: f64) -> Result<(), MoeError> {
    if alpha <= 0.0 || alpha >= 1.0 {
        return Err(MoeError::InvalidAlpha(alpha));
    }
    Ok(())
}

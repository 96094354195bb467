//! Reverse-mode differentiation over matrix-level primitives.
//!
//! A [`Tape`] records the forward pass as a sequence of primitive operations
//! together with their computed values. [`Tape::backward`] replays the record
//! in exact reverse order, accumulating adjoints, and deposits parameter
//! gradients into a [`ParamStore`]. The op set covers exactly what the model
//! needs; there is no general graph optimizer.

use std::collections::HashMap;
use std::sync::Arc;

use super::activations::{sigmoid, softmax, softplus};
use super::matrix::Matrix;
use super::real::Real;
use super::sparse::SparseBipartite;
use super::store::ParamStore;
use super::NumericsError;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct NodeId(usize);

enum Op<R: Real> {
    /// Leaf bound to a named parameter; backward accumulates into the store.
    Param(String),
    /// Leaf with no gradient (data, noise draws, masks, labels).
    Constant,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    /// Elementwise product.
    Mul(NodeId, NodeId),
    Scale(NodeId, R),
    MatMul(NodeId, NodeId),
    Transpose(NodeId),
    /// Left-node outputs of a bipartite propagation step.
    PropagateToLeft {
        graph: Arc<SparseBipartite<R>>,
        right: NodeId,
    },
    /// Right-node outputs of a bipartite propagation step.
    PropagateToRight {
        graph: Arc<SparseBipartite<R>>,
        left: NodeId,
    },
    GatherRows {
        src: NodeId,
        rows: Arc<Vec<usize>>,
    },
    /// Spreads rows of `src` into a zero matrix with `out_rows` rows.
    ScatterRows {
        src: NodeId,
        rows: Arc<Vec<usize>>,
        out_rows: usize,
    },
    /// Scales row r by the constant `scale[r]`.
    ScaleRowsConst {
        src: NodeId,
        scale: Arc<Vec<R>>,
    },
    /// Scales row r of `src` by column vector entry `col[r]`; both differentiable.
    ScaleRowsByCol {
        src: NodeId,
        col: NodeId,
    },
    /// Extracts one column as an n x 1 matrix.
    SelectColumn {
        src: NodeId,
        col: usize,
    },
    /// Per-row dot product of two equally shaped matrices, yields n x 1.
    RowwiseDot(NodeId, NodeId),
    /// Adds a 1 x m bias row to every row of src.
    AddRowBroadcast {
        src: NodeId,
        bias: NodeId,
    },
    Tanh(NodeId),
    Sigmoid(NodeId),
    Softplus(NodeId),
    SoftmaxRows(NodeId),
    /// Elementwise log(sum_j exp(x_j)) across a list of same-shape inputs.
    LogSumExpAcross(Vec<NodeId>),
    /// Elementwise binary cross-entropy given logits and constant labels.
    BceWithLogits {
        logits: NodeId,
        labels: Arc<Vec<R>>,
    },
    MeanAll(NodeId),
    SumAll(NodeId),
}

struct Node<R: Real> {
    op: Op<R>,
    value: Matrix<R>,
}

pub struct Tape<R: Real> {
    nodes: Vec<Node<R>>,
    param_nodes: HashMap<String, NodeId>,
    spent: bool,
}

impl<R: Real> Default for Tape<R> {
    fn default() -> Self {
        Self::new()
    }
}

impl<R: Real> Tape<R> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            param_nodes: HashMap::new(),
            spent: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Matrix<R> {
        &self.nodes[id.0].value
    }

    pub fn scalar(&self, id: NodeId) -> R {
        self.value(id).scalar_value()
    }

    fn push(&mut self, op: Op<R>, value: Matrix<R>) -> NodeId {
        value.debug_check_finite();
        self.nodes.push(Node { op, value });
        NodeId(self.nodes.len() - 1)
    }

    /// Leaf bound to `store[name]`; repeated calls for the same name return
    /// the same node.
    pub fn param(&mut self, store: &ParamStore<R>, name: &str) -> NodeId {
        if let Some(&id) = self.param_nodes.get(name) {
            return id;
        }
        let value = store.param(name).clone();
        let id = self.push(Op::Param(name.to_string()), value);
        self.param_nodes.insert(name.to_string(), id);
        id
    }

    pub fn constant(&mut self, value: Matrix<R>) -> NodeId {
        self.push(Op::Constant, value)
    }

    pub fn constant_scalar(&mut self, value: R) -> NodeId {
        self.constant(Matrix::scalar(value))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let value = self.value(a).add(self.value(b));
        self.push(Op::Add(a, b), value)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let value = self.value(a).sub(self.value(b));
        self.push(Op::Sub(a, b), value)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let value = self.value(a).hadamard(self.value(b));
        self.push(Op::Mul(a, b), value)
    }

    pub fn scale(&mut self, a: NodeId, factor: R) -> NodeId {
        let value = self.value(a).scale(factor);
        self.push(Op::Scale(a, factor), value)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let value = self.value(a).matmul(self.value(b));
        self.push(Op::MatMul(a, b), value)
    }

    pub fn transpose(&mut self, a: NodeId) -> NodeId {
        let value = self.value(a).transpose();
        self.push(Op::Transpose(a), value)
    }

    pub fn propagate_to_left(&mut self, graph: Arc<SparseBipartite<R>>, right: NodeId) -> NodeId {
        let value = graph.apply_left(self.value(right));
        self.push(Op::PropagateToLeft { graph, right }, value)
    }

    pub fn propagate_to_right(&mut self, graph: Arc<SparseBipartite<R>>, left: NodeId) -> NodeId {
        let value = graph.apply_right(self.value(left));
        self.push(Op::PropagateToRight { graph, left }, value)
    }

    pub fn gather_rows(&mut self, src: NodeId, rows: Arc<Vec<usize>>) -> NodeId {
        let source = self.value(src);
        let mut out = Matrix::zeros(rows.len(), source.cols());
        for (r, &idx) in rows.iter().enumerate() {
            out.row_mut(r).copy_from_slice(source.row(idx));
        }
        self.push(Op::GatherRows { src, rows }, out)
    }

    pub fn scatter_rows(&mut self, src: NodeId, rows: Arc<Vec<usize>>, out_rows: usize) -> NodeId {
        let source = self.value(src);
        assert_eq!(source.rows(), rows.len(), "scatter row count mismatch");
        let mut out = Matrix::zeros(out_rows, source.cols());
        for (r, &idx) in rows.iter().enumerate() {
            let dst = out.row_mut(idx);
            for (d, &s) in dst.iter_mut().zip(source.row(r)) {
                *d = *d + s;
            }
        }
        self.push(Op::ScatterRows { src, rows, out_rows }, out)
    }

    pub fn scale_rows_const(&mut self, src: NodeId, scale: Arc<Vec<R>>) -> NodeId {
        let source = self.value(src);
        assert_eq!(source.rows(), scale.len(), "row scale length mismatch");
        let mut out = source.clone();
        for (r, &s) in scale.iter().enumerate() {
            for v in out.row_mut(r) {
                *v = *v * s;
            }
        }
        self.push(Op::ScaleRowsConst { src, scale }, out)
    }

    pub fn scale_rows_by_col(&mut self, src: NodeId, col: NodeId) -> NodeId {
        let column = self.value(col);
        assert_eq!(column.cols(), 1, "expected a column vector");
        assert_eq!(column.rows(), self.value(src).rows(), "row count mismatch");
        let mut out = self.value(src).clone();
        for r in 0..out.rows() {
            let s = column.get(r, 0);
            for v in out.row_mut(r) {
                *v = *v * s;
            }
        }
        self.push(Op::ScaleRowsByCol { src, col }, out)
    }

    pub fn select_column(&mut self, src: NodeId, col: usize) -> NodeId {
        let source = self.value(src);
        assert!(col < source.cols(), "column out of range");
        let mut out = Matrix::zeros(source.rows(), 1);
        for r in 0..source.rows() {
            out.set(r, 0, source.get(r, col));
        }
        self.push(Op::SelectColumn { src, col }, out)
    }

    pub fn rowwise_dot(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (ma, mb) = (self.value(a), self.value(b));
        assert_eq!(ma.shape(), mb.shape(), "rowwise dot shape mismatch");
        let mut out = Matrix::zeros(ma.rows(), 1);
        for r in 0..ma.rows() {
            let dot = ma
                .row(r)
                .iter()
                .zip(mb.row(r))
                .map(|(&x, &y)| x * y)
                .fold(R::zero(), |acc, v| acc + v);
            out.set(r, 0, dot);
        }
        self.push(Op::RowwiseDot(a, b), out)
    }

    pub fn add_row_broadcast(&mut self, src: NodeId, bias: NodeId) -> NodeId {
        let (ms, mbias) = (self.value(src), self.value(bias));
        assert_eq!(mbias.rows(), 1, "bias must be a single row");
        assert_eq!(mbias.cols(), ms.cols(), "bias width mismatch");
        let mut out = ms.clone();
        for r in 0..out.rows() {
            for (v, &b) in out.row_mut(r).iter_mut().zip(mbias.row(0)) {
                *v = *v + b;
            }
        }
        self.push(Op::AddRowBroadcast { src, bias }, out)
    }

    pub fn tanh(&mut self, src: NodeId) -> NodeId {
        let value = self.value(src).map(|v| v.tanh());
        self.push(Op::Tanh(src), value)
    }

    pub fn sigmoid(&mut self, src: NodeId) -> NodeId {
        let value = self.value(src).map(sigmoid);
        self.push(Op::Sigmoid(src), value)
    }

    pub fn softplus(&mut self, src: NodeId) -> NodeId {
        let value = self.value(src).map(softplus);
        self.push(Op::Softplus(src), value)
    }

    pub fn softmax_rows(&mut self, src: NodeId) -> NodeId {
        let source = self.value(src);
        let mut out = Matrix::zeros(source.rows(), source.cols());
        for r in 0..source.rows() {
            let sm = softmax(source.row(r)).expect("softmax over empty row");
            out.row_mut(r).copy_from_slice(&sm);
        }
        self.push(Op::SoftmaxRows(src), out)
    }

    /// Elementwise `log(sum_j exp(inputs_j))`, computed with max-subtraction.
    pub fn log_sum_exp_across(&mut self, inputs: Vec<NodeId>) -> NodeId {
        assert!(!inputs.is_empty(), "logsumexp over empty input list");
        let shape = self.value(inputs[0]).shape();
        for &id in &inputs {
            assert_eq!(self.value(id).shape(), shape, "logsumexp shape mismatch");
        }
        let mut out = Matrix::zeros(shape.0, shape.1);
        for idx in 0..out.len() {
            let mut max = R::neg_infinity();
            for &id in &inputs {
                let v = self.value(id).data()[idx];
                if v > max {
                    max = v;
                }
            }
            let mut total = R::zero();
            for &id in &inputs {
                total = total + (self.value(id).data()[idx] - max).exp();
            }
            out.data_mut()[idx] = max + total.ln();
        }
        self.push(Op::LogSumExpAcross(inputs), out)
    }

    /// Elementwise `softplus(logit) - label * logit`, the stable form of
    /// `-label*ln(sigmoid) - (1-label)*ln(1-sigmoid)`.
    pub fn bce_with_logits(&mut self, logits: NodeId, labels: Arc<Vec<R>>) -> NodeId {
        let source = self.value(logits);
        assert_eq!(source.len(), labels.len(), "label count mismatch");
        let mut out = Matrix::zeros(source.rows(), source.cols());
        for (idx, (&x, &y)) in source.data().iter().zip(labels.iter()).enumerate() {
            out.data_mut()[idx] = softplus(x) - y * x;
        }
        self.push(Op::BceWithLogits { logits, labels }, out)
    }

    pub fn mean_all(&mut self, src: NodeId) -> NodeId {
        let source = self.value(src);
        let count = R::from_f64(source.len() as f64);
        let value = Matrix::scalar(source.sum() / count);
        self.push(Op::MeanAll(src), value)
    }

    pub fn sum_all(&mut self, src: NodeId) -> NodeId {
        let value = Matrix::scalar(self.value(src).sum());
        self.push(Op::SumAll(src), value)
    }

    /// Propagates adjoints from the scalar `loss` node back to every
    /// parameter leaf, accumulating `dLoss/dParam` into `store`. Consumes the
    /// tape's backward capability: a second call without a new forward pass
    /// is an error.
    pub fn backward(&mut self, loss: NodeId, store: &mut ParamStore<R>) -> Result<(), NumericsError> {
        if self.spent {
            return Err(NumericsError::TapeConsumed);
        }
        if self.value(loss).shape() != (1, 1) {
            return Err(NumericsError::NonScalarLoss {
                rows: self.value(loss).rows(),
                cols: self.value(loss).cols(),
            });
        }
        self.spent = true;

        let mut adjoints: Vec<Option<Matrix<R>>> = (0..self.nodes.len()).map(|_| None).collect();
        adjoints[loss.0] = Some(Matrix::scalar(R::one()));

        for idx in (0..self.nodes.len()).rev() {
            let grad = match adjoints[idx].take() {
                Some(g) => g,
                None => continue,
            };
            match &self.nodes[idx].op {
                Op::Param(name) => {
                    store.accumulate_grad(name, &grad);
                }
                Op::Constant => {}
                Op::Add(a, b) => {
                    accumulate(&mut adjoints, *a, &grad, self);
                    accumulate(&mut adjoints, *b, &grad, self);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut adjoints, *a, &grad, self);
                    let neg = grad.scale(-R::one());
                    accumulate(&mut adjoints, *b, &neg, self);
                }
                Op::Mul(a, b) => {
                    let da = grad.hadamard(self.value(*b));
                    let db = grad.hadamard(self.value(*a));
                    accumulate(&mut adjoints, *a, &da, self);
                    accumulate(&mut adjoints, *b, &db, self);
                }
                Op::Scale(a, factor) => {
                    let da = grad.scale(*factor);
                    accumulate(&mut adjoints, *a, &da, self);
                }
                Op::MatMul(a, b) => {
                    let da = grad.matmul(&self.value(*b).transpose());
                    let db = self.value(*a).transpose().matmul(&grad);
                    accumulate(&mut adjoints, *a, &da, self);
                    accumulate(&mut adjoints, *b, &db, self);
                }
                Op::Transpose(a) => {
                    let da = grad.transpose();
                    accumulate(&mut adjoints, *a, &da, self);
                }
                Op::PropagateToLeft { graph, right } => {
                    let dr = graph.apply_right(&grad);
                    accumulate(&mut adjoints, *right, &dr, self);
                }
                Op::PropagateToRight { graph, left } => {
                    let dl = graph.apply_left(&grad);
                    accumulate(&mut adjoints, *left, &dl, self);
                }
                Op::GatherRows { src, rows } => {
                    let mut ds = Matrix::zeros(self.value(*src).rows(), grad.cols());
                    for (r, &idx) in rows.iter().enumerate() {
                        let dst = ds.row_mut(idx);
                        for (d, &g) in dst.iter_mut().zip(grad.row(r)) {
                            *d = *d + g;
                        }
                    }
                    accumulate(&mut adjoints, *src, &ds, self);
                }
                Op::ScatterRows { src, rows, out_rows } => {
                    debug_assert_eq!(grad.rows(), *out_rows);
                    let mut ds = Matrix::zeros(rows.len(), grad.cols());
                    for (r, &idx) in rows.iter().enumerate() {
                        ds.row_mut(r).copy_from_slice(grad.row(idx));
                    }
                    accumulate(&mut adjoints, *src, &ds, self);
                }
                Op::ScaleRowsConst { src, scale } => {
                    let mut ds = grad.clone();
                    for (r, &s) in scale.iter().enumerate() {
                        for v in ds.row_mut(r) {
                            *v = *v * s;
                        }
                    }
                    accumulate(&mut adjoints, *src, &ds, self);
                }
                Op::ScaleRowsByCol { src, col } => {
                    let column = self.value(*col);
                    let source = self.value(*src);
                    let mut ds = grad.clone();
                    let mut dc = Matrix::zeros(column.rows(), 1);
                    for r in 0..ds.rows() {
                        let s = column.get(r, 0);
                        let mut dot = R::zero();
                        for (v, &x) in ds.row_mut(r).iter_mut().zip(source.row(r)) {
                            dot = dot + *v * x;
                            *v = *v * s;
                        }
                        dc.set(r, 0, dot);
                    }
                    accumulate(&mut adjoints, *src, &ds, self);
                    accumulate(&mut adjoints, *col, &dc, self);
                }
                Op::SelectColumn { src, col } => {
                    let mut ds = Matrix::zeros(self.value(*src).rows(), self.value(*src).cols());
                    for r in 0..grad.rows() {
                        ds.set(r, *col, grad.get(r, 0));
                    }
                    accumulate(&mut adjoints, *src, &ds, self);
                }
                Op::RowwiseDot(a, b) => {
                    let (ma, mb) = (self.value(*a), self.value(*b));
                    let mut da = Matrix::zeros(ma.rows(), ma.cols());
                    let mut db = Matrix::zeros(mb.rows(), mb.cols());
                    for r in 0..ma.rows() {
                        let g = grad.get(r, 0);
                        for ((dav, dbv), (&av, &bv)) in da
                            .row_mut(r)
                            .iter_mut()
                            .zip(db.row_mut(r).iter_mut())
                            .zip(ma.row(r).iter().zip(mb.row(r)))
                        {
                            *dav = g * bv;
                            *dbv = g * av;
                        }
                    }
                    accumulate(&mut adjoints, *a, &da, self);
                    accumulate(&mut adjoints, *b, &db, self);
                }
                Op::AddRowBroadcast { src, bias } => {
                    let mut db = Matrix::zeros(1, grad.cols());
                    for r in 0..grad.rows() {
                        for (d, &g) in db.row_mut(0).iter_mut().zip(grad.row(r)) {
                            *d = *d + g;
                        }
                    }
                    accumulate(&mut adjoints, *src, &grad, self);
                    accumulate(&mut adjoints, *bias, &db, self);
                }
                Op::Tanh(a) => {
                    let y = &self.nodes[idx].value;
                    let ds = grad.hadamard(&y.map(|v| R::one() - v * v));
                    accumulate(&mut adjoints, *a, &ds, self);
                }
                Op::Sigmoid(a) => {
                    let y = &self.nodes[idx].value;
                    let ds = grad.hadamard(&y.map(|v| v * (R::one() - v)));
                    accumulate(&mut adjoints, *a, &ds, self);
                }
                Op::Softplus(a) => {
                    let ds = grad.hadamard(&self.value(*a).map(sigmoid));
                    accumulate(&mut adjoints, *a, &ds, self);
                }
                Op::SoftmaxRows(a) => {
                    let y = &self.nodes[idx].value;
                    let mut ds = Matrix::zeros(y.rows(), y.cols());
                    for r in 0..y.rows() {
                        let dot = grad
                            .row(r)
                            .iter()
                            .zip(y.row(r))
                            .map(|(&g, &p)| g * p)
                            .fold(R::zero(), |acc, v| acc + v);
                        for (d, (&g, &p)) in ds
                            .row_mut(r)
                            .iter_mut()
                            .zip(grad.row(r).iter().zip(y.row(r)))
                        {
                            *d = p * (g - dot);
                        }
                    }
                    accumulate(&mut adjoints, *a, &ds, self);
                }
                Op::LogSumExpAcross(inputs) => {
                    let out = &self.nodes[idx].value;
                    for &input in inputs {
                        let x = self.value(input);
                        let mut ds = Matrix::zeros(x.rows(), x.cols());
                        for i in 0..x.len() {
                            ds.data_mut()[i] = grad.data()[i] * (x.data()[i] - out.data()[i]).exp();
                        }
                        accumulate(&mut adjoints, input, &ds, self);
                    }
                }
                Op::BceWithLogits { logits, labels } => {
                    let x = self.value(*logits);
                    let mut ds = Matrix::zeros(x.rows(), x.cols());
                    for i in 0..x.len() {
                        ds.data_mut()[i] = grad.data()[i] * (sigmoid(x.data()[i]) - labels[i]);
                    }
                    accumulate(&mut adjoints, *logits, &ds, self);
                }
                Op::MeanAll(a) => {
                    let src = self.value(*a);
                    let g = grad.scalar_value() / R::from_f64(src.len() as f64);
                    let ds = Matrix::filled(src.rows(), src.cols(), g);
                    accumulate(&mut adjoints, *a, &ds, self);
                }
                Op::SumAll(a) => {
                    let src = self.value(*a);
                    let ds = Matrix::filled(src.rows(), src.cols(), grad.scalar_value());
                    accumulate(&mut adjoints, *a, &ds, self);
                }
            }
        }
        Ok(())
    }
}

fn accumulate<R: Real>(
    adjoints: &mut [Option<Matrix<R>>],
    target: NodeId,
    delta: &Matrix<R>,
    tape: &Tape<R>,
) {
    match &mut adjoints[target.0] {
        Some(existing) => existing.axpy(R::one(), delta),
        slot @ None => {
            debug_assert_eq!(tape.value(target).shape(), delta.shape());
            *slot = Some(delta.clone());
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single_param_store(values: Vec<f64>, cols: usize) -> ParamStore<f64> {
        let mut store = ParamStore::new();
        let rows = values.len() / cols;
        store.insert("x", Matrix::from_vec(rows, cols, values));
        store
    }

    #[test]
    fn square_loss_gradient() {
        // loss = x^2 at x = 3 -> grad 6
        let mut store = single_param_store(vec![3.0], 1);
        let mut tape = Tape::new();
        let x = tape.param(&store, "x");
        let sq = tape.mul(x, x);
        let loss = tape.sum_all(sq);
        assert_eq!(tape.scalar(loss), 9.0);
        tape.backward(loss, &mut store).unwrap();
        assert_eq!(store.grad("x").get(0, 0), 6.0);
    }

    #[test]
    fn softmax_sum_is_constant() {
        // loss = sum(softmax(x)) == 1, so the gradient is exactly zero.
        let mut store = single_param_store(vec![0.3, -1.2, 2.0], 3);
        let mut tape = Tape::new();
        let x = tape.param(&store, "x");
        let sm = tape.softmax_rows(x);
        let loss = tape.sum_all(sm);
        tape.backward(loss, &mut store).unwrap();
        for &g in store.grad("x").data() {
            assert!(g.abs() < 1e-15, "grad {g}");
        }
    }

    #[test]
    fn double_backward_is_an_error() {
        let mut store = single_param_store(vec![1.0], 1);
        let mut tape = Tape::new();
        let x = tape.param(&store, "x");
        let loss = tape.sum_all(x);
        tape.backward(loss, &mut store).unwrap();
        assert!(matches!(
            tape.backward(loss, &mut store),
            Err(NumericsError::TapeConsumed)
        ));
    }

    #[test]
    fn non_scalar_loss_is_an_error() {
        let mut store = single_param_store(vec![1.0, 2.0], 2);
        let mut tape = Tape::new();
        let x = tape.param(&store, "x");
        assert!(matches!(
            tape.backward(x, &mut store),
            Err(NumericsError::NonScalarLoss { .. })
        ));
    }

    #[test]
    fn untouched_parameters_keep_zero_gradients() {
        let mut store = single_param_store(vec![2.0], 1);
        store.insert("unused", Matrix::from_vec(1, 2, vec![5.0, 7.0]));
        let mut tape = Tape::new();
        let x = tape.param(&store, "x");
        let sq = tape.mul(x, x);
        let loss = tape.sum_all(sq);
        tape.backward(loss, &mut store).unwrap();
        assert_eq!(store.grad("unused").data(), &[0.0, 0.0]);
    }

    #[test]
    fn backward_is_linear_in_the_loss() {
        // grads of (a*L1 + b*L2) == a*grads(L1) + b*grads(L2)
        let build = |store: &ParamStore<f64>, wa: f64, wb: f64| {
            let mut tape = Tape::new();
            let x = tape.param(store, "x");
            let sq = tape.mul(x, x);
            let l1 = tape.sum_all(sq);
            let cube = tape.mul(sq, x);
            let l2 = tape.sum_all(cube);
            let l1s = tape.scale(l1, wa);
            let l2s = tape.scale(l2, wb);
            let loss = tape.add(l1s, l2s);
            (tape, loss)
        };
        let grads_for = |wa: f64, wb: f64| -> Vec<f64> {
            let mut store = single_param_store(vec![1.3, -0.7], 2);
            let (mut tape, loss) = build(&store, wa, wb);
            tape.backward(loss, &mut store).unwrap();
            store.grad("x").data().to_vec()
        };
        let g1 = grads_for(1.0, 0.0);
        let g2 = grads_for(0.0, 1.0);
        let combined = grads_for(2.5, -0.5);
        for i in 0..2 {
            let expected = 2.5 * g1[i] - 0.5 * g2[i];
            assert!((combined[i] - expected).abs() < 1e-6);
        }
    }
}

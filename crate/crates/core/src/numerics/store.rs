//! Named parameter storage with paired gradient slots and Adam state.

use std::collections::BTreeMap;

use super::matrix::Matrix;
use super::real::Real;
use super::NumericsError;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPSILON: f64 = 1e-8;

#[derive(Clone)]
struct Slot<R: Real> {
    value: Matrix<R>,
    grad: Matrix<R>,
    first_moment: Matrix<R>,
    second_moment: Matrix<R>,
    steps: u64,
}

/// Named dense parameters, each with a same-shape gradient accumulator and
/// per-parameter Adam moments. Iteration order is the name order (BTreeMap),
/// which keeps checkpoints and gradient checks deterministic.
#[derive(Clone, Default)]
pub struct ParamStore<R: Real> {
    slots: BTreeMap<String, Slot<R>>,
}

impl<R: Real> ParamStore<R> {
    pub fn new() -> Self {
        ParamStore {
            slots: BTreeMap::new(),
        }
    }

    /// Registers a parameter; replaces any previous entry of the same name
    /// and resets its gradient and optimizer state.
    pub fn insert(&mut self, name: impl Into<String>, value: Matrix<R>) {
        let (rows, cols) = value.shape();
        self.slots.insert(
            name.into(),
            Slot {
                value,
                grad: Matrix::zeros(rows, cols),
                first_moment: Matrix::zeros(rows, cols),
                second_moment: Matrix::zeros(rows, cols),
                steps: 0,
            },
        );
    }

    pub fn contains(&self, name: &str) -> bool {
        self.slots.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.slots.keys().map(|s| s.as_str())
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    /// Total number of scalar coordinates across all parameters.
    pub fn coordinate_count(&self) -> usize {
        self.slots.values().map(|s| s.value.len()).sum()
    }

    pub fn param(&self, name: &str) -> &Matrix<R> {
        &self
            .slots
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter `{name}`"))
            .value
    }

    pub fn param_mut(&mut self, name: &str) -> &mut Matrix<R> {
        &mut self
            .slots
            .get_mut(name)
            .unwrap_or_else(|| panic!("unknown parameter `{name}`"))
            .value
    }

    pub fn try_param(&self, name: &str) -> Option<&Matrix<R>> {
        self.slots.get(name).map(|s| &s.value)
    }

    pub fn grad(&self, name: &str) -> &Matrix<R> {
        &self
            .slots
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter `{name}`"))
            .grad
    }

    /// Adds `delta` into the gradient slot of `name`.
    pub fn accumulate_grad(&mut self, name: &str, delta: &Matrix<R>) {
        let slot = self
            .slots
            .get_mut(name)
            .unwrap_or_else(|| panic!("unknown parameter `{name}`"));
        slot.grad.axpy(R::one(), delta);
    }

    /// Resets every gradient slot to exact zero.
    pub fn zero_grads(&mut self) {
        for slot in self.slots.values_mut() {
            slot.grad = Matrix::zeros(slot.value.rows(), slot.value.cols());
        }
    }

    /// Sum of squared entries over every parameter.
    pub fn squared_param_norm(&self) -> R {
        self.slots
            .values()
            .map(|s| s.value.squared_norm())
            .fold(R::zero(), |a, b| a + b)
    }

    /// Bias-corrected Adam update applied in place from the accumulated
    /// gradients, with the canonical constants.
    pub fn adam_step(&mut self, learning_rate: f64) -> Result<(), NumericsError> {
        self.adam_step_with(learning_rate, ADAM_BETA1, ADAM_BETA2, ADAM_EPSILON)
    }

    pub fn adam_step_with(
        &mut self,
        learning_rate: f64,
        beta1: f64,
        beta2: f64,
        epsilon: f64,
    ) -> Result<(), NumericsError> {
        if learning_rate <= 0.0 {
            return Err(NumericsError::InvalidLearningRate(learning_rate));
        }
        let lr = R::from_f64(learning_rate);
        let b1 = R::from_f64(beta1);
        let b2 = R::from_f64(beta2);
        let eps = R::from_f64(epsilon);
        let one = R::one();
        for slot in self.slots.values_mut() {
            slot.steps += 1;
            let correction1 = R::from_f64(1.0 - beta1.powi(slot.steps as i32));
            let correction2 = R::from_f64(1.0 - beta2.powi(slot.steps as i32));
            let n = slot.value.len();
            for idx in 0..n {
                let g = slot.grad.data()[idx];
                let m = b1 * slot.first_moment.data()[idx] + (one - b1) * g;
                let v = b2 * slot.second_moment.data()[idx] + (one - b2) * g * g;
                slot.first_moment.data_mut()[idx] = m;
                slot.second_moment.data_mut()[idx] = v;
                let m_hat = m / correction1;
                let v_hat = v / correction2;
                slot.value.data_mut()[idx] =
                    slot.value.data()[idx] - lr * m_hat / (v_hat.sqrt() + eps);
            }
            slot.value.debug_check_finite();
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store_with(name: &str, values: Vec<f64>) -> ParamStore<f64> {
        let mut store = ParamStore::new();
        store.insert(name, Matrix::from_vec(1, values.len(), values));
        store
    }

    #[test]
    fn first_adam_step_moves_by_about_lr() {
        let mut store = store_with("w", vec![1.0]);
        store.accumulate_grad("w", &Matrix::from_vec(1, 1, vec![0.37]));
        store.adam_step(0.01).unwrap();
        // m_hat / (sqrt(v_hat) + eps) ~= sign(g) on the first step.
        let moved = 1.0 - store.param("w").get(0, 0);
        assert!((moved - 0.01).abs() < 1e-6, "moved {moved}");
    }

    #[test]
    fn zero_gradient_is_identity() {
        let mut store = store_with("w", vec![0.5, -0.25]);
        let before = store.param("w").clone();
        store.adam_step(0.1).unwrap();
        assert_eq!(store.param("w").data(), before.data());
    }

    #[test]
    fn deterministic_across_clones() {
        let mut a = store_with("w", vec![1.0, 2.0]);
        let mut b = a.clone();
        for _ in 0..5 {
            let g = Matrix::from_vec(1, 2, vec![0.3, -0.7]);
            a.accumulate_grad("w", &g);
            b.accumulate_grad("w", &g);
            a.adam_step(0.05).unwrap();
            b.adam_step(0.05).unwrap();
            a.zero_grads();
            b.zero_grads();
        }
        assert_eq!(a.param("w").data(), b.param("w").data());
    }

    #[test]
    fn non_positive_learning_rate_is_rejected() {
        let mut store = store_with("w", vec![1.0]);
        assert!(store.adam_step(0.0).is_err());
        assert!(store.adam_step(-1.0).is_err());
    }

    #[test]
    fn zero_grads_resets_exactly() {
        let mut store = store_with("w", vec![1.0]);
        store.accumulate_grad("w", &Matrix::from_vec(1, 1, vec![3.0]));
        store.zero_grads();
        assert_eq!(store.grad("w").get(0, 0), 0.0);
    }
}

//! Finite-difference verification of tape gradients.

use super::matrix::Matrix;
use super::real::Real;
use super::store::ParamStore;
use super::tape::{NodeId, Tape};
use super::NumericsError;

/// Coordinates above which the checker samples a deterministic stride subset
/// instead of sweeping every entry.
const EXHAUSTIVE_LIMIT: usize = 10_000;

/// Both gradients below this magnitude count as matching exactly.
const ZERO_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_param: String,
    pub worst_coordinate: usize,
    pub coordinates_checked: usize,
}

/// Compares tape gradients against central differences
/// `(L(theta+eps) - L(theta-eps)) / (2 eps)` on every coordinate (or a strided
/// subset above 10^4 coordinates) and reports the maximum relative error.
///
/// `loss_builder` must be deterministic given the store: any stochastic input
/// (gate noise, sampled batches) has to be drawn once outside and captured.
pub fn grad_check<R, F>(
    store: &ParamStore<R>,
    epsilon: f64,
    mut loss_builder: F,
) -> Result<GradCheckReport, NumericsError>
where
    R: Real,
    F: FnMut(&ParamStore<R>) -> (Tape<R>, NodeId),
{
    let mut work = store.clone();
    work.zero_grads();

    let (mut tape, loss) = loss_builder(&work);
    let loss_value = tape.scalar(loss).as_f64();
    if !loss_value.is_finite() {
        return Err(NumericsError::NonFiniteLoss(loss_value));
    }
    tape.backward(loss, &mut work)?;
    let analytic: Vec<(String, Matrix<R>)> = work
        .names()
        .map(|n| (n.to_string(), work.grad(n).clone()))
        .collect();

    let total: usize = analytic.iter().map(|(_, g)| g.len()).sum();
    let stride = total.div_ceil(EXHAUSTIVE_LIMIT).max(1);

    let eps = R::from_f64(epsilon);
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_param: String::new(),
        worst_coordinate: 0,
        coordinates_checked: 0,
    };

    let mut global_index = 0usize;
    for (name, grads) in &analytic {
        for coord in 0..grads.len() {
            let sampled = global_index.is_multiple_of(stride);
            global_index += 1;
            if !sampled {
                continue;
            }
            let original = work.param(name).data()[coord];

            work.param_mut(name).data_mut()[coord] = original + eps;
            let plus = evaluate(&work, &mut loss_builder)?;
            work.param_mut(name).data_mut()[coord] = original - eps;
            let minus = evaluate(&work, &mut loss_builder)?;
            work.param_mut(name).data_mut()[coord] = original;

            let numeric = (plus - minus) / (2.0 * epsilon);
            let exact = grads.data()[coord].as_f64();
            let error = relative_error(exact, numeric);
            report.coordinates_checked += 1;
            if error > report.max_rel_error {
                report.max_rel_error = error;
                report.worst_param = name.clone();
                report.worst_coordinate = coord;
            }
        }
    }
    Ok(report)
}

fn evaluate<R, F>(store: &ParamStore<R>, loss_builder: &mut F) -> Result<f64, NumericsError>
where
    R: Real,
    F: FnMut(&ParamStore<R>) -> (Tape<R>, NodeId),
{
    let (tape, loss) = loss_builder(store);
    let value = tape.scalar(loss).as_f64();
    if !value.is_finite() {
        return Err(NumericsError::NonFiniteLoss(value));
    }
    Ok(value)
}

fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs());
    if scale < ZERO_TOLERANCE {
        // Covers parameters the loss does not depend on: both sides are zero.
        0.0
    } else {
        (analytic - numeric).abs() / scale
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_loss_checks_clean() {
        let mut store = ParamStore::<f64>::new();
        store.insert("w", Matrix::from_vec(2, 2, vec![0.5, -1.2, 2.0, 0.1]));
        let report = grad_check(&store, 1e-3, |s| {
            let mut tape = Tape::new();
            let w = tape.param(s, "w");
            let sq = tape.mul(w, w);
            let loss = tape.sum_all(sq);
            (tape, loss)
        })
        .unwrap();
        assert!(report.max_rel_error < 1e-6, "{report:?}");
        assert_eq!(report.coordinates_checked, 4);
    }

    #[test]
    fn independent_parameter_reports_zero_error() {
        let mut store = ParamStore::<f64>::new();
        store.insert("used", Matrix::scalar(1.5));
        store.insert("unused", Matrix::scalar(-3.0));
        let report = grad_check(&store, 1e-3, |s| {
            let mut tape = Tape::new();
            let w = tape.param(s, "used");
            // Keep the unused parameter registered on the tape.
            let _ = tape.param(s, "unused");
            let sq = tape.mul(w, w);
            let loss = tape.sum_all(sq);
            (tape, loss)
        })
        .unwrap();
        assert!(report.max_rel_error < 1e-6, "{report:?}");
    }

    #[test]
    fn composite_activation_stack_checks_clean() {
        // Three nonlinear layers over a 3x3 parameter block.
        let mut store = ParamStore::<f64>::new();
        store.insert(
            "w",
            Matrix::from_vec(3, 3, vec![0.3, -0.6, 0.9, 0.2, -0.4, 0.8, -0.1, 0.7, 0.5]),
        );
        store.insert("b", Matrix::from_vec(1, 3, vec![0.11, -0.23, 0.37]));
        let report = grad_check(&store, 1e-3, |s| {
            let mut tape = Tape::new();
            let w = tape.param(s, "w");
            let b = tape.param(s, "b");
            let h1 = tape.tanh(w);
            let h2 = tape.add_row_broadcast(h1, b);
            let h3 = tape.softmax_rows(h2);
            let wh = tape.matmul(h3, w);
            let h4 = tape.sigmoid(wh);
            let h5 = tape.softplus(h4);
            let loss = tape.mean_all(h5);
            (tape, loss)
        })
        .unwrap();
        assert!(report.max_rel_error < 1e-4, "{report:?}");
    }

    #[test]
    fn relative_error_handles_zero_gradients() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert_eq!(relative_error(2.0, 1.0), 0.5);
        assert!(relative_error(1e-12, 0.0) == 0.0);
    }
}

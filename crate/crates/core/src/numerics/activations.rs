//! Numerically stable activation functions.

use super::real::Real;
use super::NumericsError;

/// Softmax with max-subtraction for overflow safety.
///
/// Output entries are positive and sum to 1 within 1e-6.
pub fn softmax<R: Real>(logits: &[R]) -> Result<Vec<R>, NumericsError> {
    if logits.is_empty() {
        return Err(NumericsError::EmptySoftmax);
    }
    let max = logits
        .iter()
        .copied()
        .fold(R::neg_infinity(), |a, b| if b > a { b } else { a });
    let mut out: Vec<R> = logits.iter().map(|&x| (x - max).exp()).collect();
    let total: R = out.iter().copied().sum();
    for v in out.iter_mut() {
        *v = *v / total;
    }
    Ok(out)
}

/// `ln(1 + e^x)` without overflow for large `x`.
#[inline]
pub fn softplus<R: Real>(x: R) -> R {
    if x > R::zero() {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Logistic sigmoid; `sigmoid(0) == 0.5` exactly.
#[inline]
pub fn sigmoid<R: Real>(x: R) -> R {
    if x >= R::zero() {
        R::one() / (R::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (R::one() + e)
    }
}

/// Hyperbolic tangent activation.
#[inline]
pub fn tanh_act<R: Real>(x: R) -> R {
    x.tanh()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_symmetry() {
        let out = softmax(&[0.0f64, 0.0]).unwrap();
        assert_eq!(out, vec![0.5, 0.5]);
    }

    #[test]
    fn softmax_large_logits_no_overflow() {
        let out = softmax(&[1000.0f64, 1000.0, 1000.0]).unwrap();
        for v in &out {
            assert!((v - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_closed_form() {
        // e / (e + 1) for logits (1, 0).
        let out = softmax(&[1.0f64, 0.0]).unwrap();
        let e = std::f64::consts::E;
        assert!((out[0] - e / (e + 1.0)).abs() < 1e-12);
        assert!((out[0] - 0.7311).abs() < 1e-4);
        assert!((out[1] - 0.2689).abs() < 1e-4);
    }

    #[test]
    fn softmax_empty_is_error() {
        assert!(softmax::<f64>(&[]).is_err());
    }

    #[test]
    fn softplus_values() {
        assert!((softplus(0.0f64) - std::f64::consts::LN_2).abs() < 1e-12);
        assert!((softplus(100.0f64) - 100.0).abs() < 1e-9);
        let near_zero = softplus(-100.0f64);
        assert!(near_zero > 0.0 && near_zero < 1e-40);
    }

    #[test]
    fn sigmoid_and_tanh_values() {
        assert_eq!(sigmoid(0.0f64), 0.5);
        assert_eq!(tanh_act(0.0f64), 0.0);
        assert!((tanh_act(0.5f64) - 0.4621).abs() < 1e-4);
        assert!((sigmoid(-30.0f64)).abs() < 1e-12);
        assert!((sigmoid(30.0f64) - 1.0).abs() < 1e-12);
    }
}

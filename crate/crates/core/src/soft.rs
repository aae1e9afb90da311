//! Soft minimum and soft maximum.
//!
//! `softmin_ρ(z) = -(1/ρ) log Σ exp(-ρ z_i)` and
//! `softmax_ρ(z) = (1/ρ) log Σ exp(ρ z_i) - log(N)/ρ`, both evaluated with a
//! max-shifted log-sum-exp. They satisfy
//! `min - log(N)/ρ ≤ softmin ≤ min` and `max - log(N)/ρ ≤ softmax ≤ max`.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SoftError {
    #[error("soft min/max of an empty list")]
    Empty,
    #[error("sharpness must be positive and finite, got {0}")]
    BadSharpness(f64),
}

fn check(rho: f64, values: &[f64]) -> Result<(), SoftError> {
    if values.is_empty() {
        return Err(SoftError::Empty);
    }
    if !(rho.is_finite() && rho > 0.0) {
        return Err(SoftError::BadSharpness(rho));
    }
    Ok(())
}

pub fn softmin(rho: f64, values: &[f64]) -> Result<f64, SoftError> {
    check(rho, values)?;
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let sum: f64 = values.iter().map(|&z| (-rho * (z - min)).exp()).sum();
    // sum ≥ 1, so the correction is never positive.
    Ok(min - sum.ln() / rho)
}

pub fn softmax(rho: f64, values: &[f64]) -> Result<f64, SoftError> {
    check(rho, values)?;
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    // The largest term is exactly 1, so the log-sum is never negative.
    let sum: f64 = values.iter().map(|&z| (rho * (z - max)).exp()).sum();
    Ok((max + (sum.ln() - (values.len() as f64).ln()) / rho).min(max))
}

/// Partial derivatives of `softmin_ρ`: the normalized weights `exp(-ρ z_i) / Σ exp(-ρ z_k)`.
pub fn softmin_weights(rho: f64, values: &[f64]) -> Result<Vec<f64>, SoftError> {
    check(rho, values)?;
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let mut w: Vec<f64> = values.iter().map(|&z| (-rho * (z - min)).exp()).collect();
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= total);
    Ok(w)
}

/// Partial derivatives of `softmax_ρ`: `exp(ρ z_i) / Σ exp(ρ z_k)`.
pub fn softmax_weights(rho: f64, values: &[f64]) -> Result<Vec<f64>, SoftError> {
    check(rho, values)?;
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut w: Vec<f64> = values.iter().map(|&z| (rho * (z - max)).exp()).collect();
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= total);
    Ok(w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn singleton_is_identity() {
        assert_eq!(softmin(3.0, &[0.7]).unwrap(), 0.7);
        assert_eq!(softmax(3.0, &[0.7]).unwrap(), 0.7);
    }

    #[test]
    fn equal_arguments_cancel_correction() {
        let z = [0.25; 7];
        assert!((softmax(50.0, &z).unwrap() - 0.25).abs() < 1e-15);
    }

    #[test]
    fn softmin_reference_value() {
        // -½ ln(1 + e⁻²), evaluated at high precision.
        let expected = -0.063_464_005_521_486_3;
        assert!((softmin(2.0, &[0.0, 1.0]).unwrap() - expected).abs() < 1e-15);
    }

    #[test]
    fn large_sharpness_does_not_overflow() {
        let v = softmax(1e6, &[500.0, 499.0]).unwrap();
        assert!(v.is_finite() && v <= 500.0);
        let v = softmin(1e6, &[-500.0, 499.0]).unwrap();
        assert!(v.is_finite() && v <= -500.0);
        let w = softmax_weights(1e6, &[1.0, 0.0]).unwrap();
        assert_eq!(w, vec![1.0, 0.0]);
    }

    #[test]
    fn errors() {
        assert_eq!(softmin(1.0, &[]), Err(SoftError::Empty));
        assert!(matches!(softmax(0.0, &[1.0]), Err(SoftError::BadSharpness(_))));
        assert!(matches!(softmin(f64::NAN, &[1.0]), Err(SoftError::BadSharpness(_))));
    }

    #[test]
    fn weights_are_derivatives() {
        let z = [0.1, -0.3, 0.05, 0.2];
        let rho = 7.0;
        let w_min = softmin_weights(rho, &z).unwrap();
        let w_max = softmax_weights(rho, &z).unwrap();
        let eps = 1e-6;
        for i in 0..z.len() {
            let mut p = z;
            let mut m = z;
            p[i] += eps;
            m[i] -= eps;
            let d_min = (softmin(rho, &p).unwrap() - softmin(rho, &m).unwrap()) / (2.0 * eps);
            let d_max = (softmax(rho, &p).unwrap() - softmax(rho, &m).unwrap()) / (2.0 * eps);
            assert!((d_min - w_min[i]).abs() < 1e-8);
            assert!((d_max - w_max[i]).abs() < 1e-8);
        }
    }

    proptest! {
        #[test]
        fn sandwich_bounds(values in prop::collection::vec(-10.0f64..10.0, 1..20), rho in 0.1f64..1000.0) {
            let n = values.len() as f64;
            let min = values.iter().copied().fold(f64::INFINITY, f64::min);
            let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let smin = softmin(rho, &values).unwrap();
            let smax = softmax(rho, &values).unwrap();
            prop_assert!(smin <= min);
            prop_assert!(smin >= min - n.ln() / rho - 1e-12);
            prop_assert!(smax <= max);
            prop_assert!(smax >= max - n.ln() / rho - 1e-12);
        }

        #[test]
        fn softmax_is_permutation_invariant(mut values in prop::collection::vec(-1.0f64..1.0, 2..8), rho in 1.0f64..200.0) {
            let a = softmax(rho, &values).unwrap();
            values.reverse();
            let b = softmax(rho, &values).unwrap();
            prop_assert!((a - b).abs() < 1e-12);
        }
    }
}

//! Inverted-pendulum benchmark constants: safe set, performance reward and the
//! state box used for grid sweeps.

use std::f64::consts::PI;

use crate::dynamics::{ScalarField, Vector};

/// Exponent of the superellipse norm bounding the safe set.
pub const SAFE_NORM_EXPONENT: i32 = 100;
/// Angle half-width of the safe set.
pub const SAFE_ANGLE: f64 = PI - 0.5;
/// Rate half-width of the safe set.
pub const SAFE_RATE: f64 = 2.0;
/// Target state of the performance reward.
pub const X_OPT: [f64; 2] = [0.8, 0.0];
/// State box for grid sweeps and the reachability oracle; contains the safe set.
pub const STATE_BOX_LOWER: [f64; 2] = [-PI - 0.2, -2.4];
pub const STATE_BOX_UPPER: [f64; 2] = [PI + 0.2, 2.4];

/// `1 - ‖(φ / (π - 0.5), φ̇ / 2)‖₁₀₀`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PendulumSafeSet;

impl PendulumSafeSet {
    fn scaled(x: &Vector<2>) -> [f64; 2] {
        [x[0] / SAFE_ANGLE, x[1] / SAFE_RATE]
    }

    /// `‖z‖_p` in max-factored form.
    fn norm(z: &[f64; 2]) -> f64 {
        let m = z[0].abs().max(z[1].abs());
        if m == 0.0 {
            return 0.0;
        }
        let s: f64 = z.iter().map(|v| (v.abs() / m).powi(SAFE_NORM_EXPONENT)).sum();
        m * s.powf(1.0 / SAFE_NORM_EXPONENT as f64)
    }
}

impl ScalarField<2> for PendulumSafeSet {
    fn value(&self, x: &Vector<2>) -> f64 {
        1.0 - Self::norm(&Self::scaled(x))
    }

    /// Zero at the origin, where the norm has no gradient.
    fn gradient(&self, x: &Vector<2>) -> Vector<2> {
        let z = Self::scaled(x);
        let n = Self::norm(&z);
        if n == 0.0 {
            return Vector::<2>::zeros();
        }
        let d = |v: f64| v.signum() * (v.abs() / n).powi(SAFE_NORM_EXPONENT - 1);
        Vector::<2>::new(-d(z[0]) / SAFE_ANGLE, -d(z[1]) / SAFE_RATE)
    }
}

/// Performance reward `-(φ - 0.8)² - 0.1 φ̇² - 0.001 u²`.
pub fn performance_reward(x: &Vector<2>, u: f64) -> f64 {
    -(x[0] - X_OPT[0]).powi(2) - 0.1 * x[1] * x[1] - 0.001 * u * u
}

//! Minimum-intervention safety filter with multi-backup switching.

use thiserror::Error;

use crate::backup::smoothstep;
use crate::barrier::{Barrier, BarrierError, BarrierEvaluation, LieMode};
use crate::dynamics::{AdmissibleBox, Policy, SystemModel, Vector};

#[derive(Debug, Error)]
pub enum ShieldError {
    #[error("no backup has h_j ≥ ε; the augmented backup control is undefined")]
    NoActiveBackup,
    #[error(transparent)]
    Barrier(#[from] BarrierError),
}

pub type Result<T> = std::result::Result<T, ShieldError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QpStatus {
    Optimal,
    Infeasible,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpResult<const M: usize> {
    /// Minimiser when optimal; otherwise the box point maximising the
    /// constraint left-hand side.
    pub u_star: Vector<M>,
    /// `L_f h + L_g h û + α(h - ε)` at `u_star`.
    pub constraint_slack: f64,
    pub objective: f64,
    pub status: QpStatus,
}

/// Solves `min ‖û - u_d‖²` over the box subject to `aᵀû ≥ c`.
///
/// The KKT point is `û(λ) = clip(u_d + λa)` with the smallest `λ ≥ 0` such that
/// `aᵀû(λ) ≥ c`. `aᵀû(λ)` is nondecreasing and piecewise linear in `λ`, so the
/// multiplier is found exactly by walking its breakpoints.
pub fn solve_box_halfspace_qp<const M: usize>(
    a: &Vector<M>,
    c: f64,
    u_d: &Vector<M>,
    control_box: &AdmissibleBox<M>,
) -> QpResult<M> {
    let lo = control_box.lower();
    let hi = control_box.upper();
    let at = |lambda: f64| control_box.clamp(&(u_d + a * lambda));
    let finish = |u: Vector<M>, status| QpResult {
        constraint_slack: a.dot(&u) - c,
        objective: (u - u_d).norm_squared(),
        u_star: u,
        status,
    };

    let u0 = at(0.0);
    if a.dot(&u0) >= c {
        return finish(u0, QpStatus::Optimal);
    }
    // Best achievable left-hand side: the vertex selected by the signs of `a`.
    let u_max = Vector::<M>::from_fn(|i, _| if a[i] > 0.0 { hi[i] } else if a[i] < 0.0 { lo[i] } else { u0[i] });
    if a.dot(&u_max) < c {
        return finish(u_max, QpStatus::Infeasible);
    }

    let mut breaks: Vec<f64> = Vec::with_capacity(2 * M);
    for i in 0..M {
        if a[i] != 0.0 {
            for bound in [lo[i], hi[i]] {
                let l = (bound - u_d[i]) / a[i];
                if l > 0.0 {
                    breaks.push(l);
                }
            }
        }
    }
    breaks.sort_by(f64::total_cmp);

    let mut left = 0.0;
    let mut phi_left = a.dot(&u0);
    for &right in &breaks {
        let phi_right = a.dot(&at(right));
        if phi_right >= c {
            // Linear on [left, right].
            let t = if phi_right > phi_left { (c - phi_left) / (phi_right - phi_left) } else { 1.0 };
            let lambda = left + t.clamp(0.0, 1.0) * (right - left);
            if a.dot(&at(lambda)) >= c {
                return finish(at(lambda), QpStatus::Optimal);
            }
            // Rounding left the interpolated multiplier just short; tighten
            // from above so the constraint holds exactly.
            let (mut short, mut ok) = (lambda, right);
            for _ in 0..64 {
                let mid = 0.5 * (short + ok);
                if mid <= short || mid >= ok {
                    break;
                }
                if a.dot(&at(mid)) >= c {
                    ok = mid;
                } else {
                    short = mid;
                }
            }
            return finish(at(ok), QpStatus::Optimal);
        }
        left = right;
        phi_left = phi_right;
    }
    finish(u_max, QpStatus::Optimal)
}

/// The safety QP for a barrier evaluation carrying Lie terms. Without Lie terms
/// the evaluation cannot certify anything and the result is infeasible.
pub fn solve_safety_qp<const N: usize, const M: usize>(
    eval: &BarrierEvaluation<N, M>,
    u_d: &Vector<M>,
    control_box: &AdmissibleBox<M>,
    alpha: f64,
    epsilon: f64,
) -> QpResult<M> {
    match &eval.lie {
        Some(lie) => solve_box_halfspace_qp(&lie.lg_h, -(lie.lf_h + alpha * (eval.h - epsilon)), u_d, control_box),
        None => QpResult {
            u_star: control_box.clamp(u_d),
            constraint_slack: f64::NEG_INFINITY,
            objective: f64::INFINITY,
            status: QpStatus::Infeasible,
        },
    }
}

/// `σ`: 0 for `a ≤ 0`, 1 for `a ≥ 1`, C¹ smoothstep in between.
pub fn sigma(a: f64) -> f64 {
    smoothstep(a)
}

/// Weighted mean of the backup controls with weights `h_j - ε` over
/// `{j : h_j ≥ ε}`.
pub fn augmented_backup_control<const M: usize>(h_j: &[f64], controls: &[Vector<M>], epsilon: f64) -> Result<Vector<M>> {
    let mut total = 0.0;
    let mut acc = Vector::<M>::zeros();
    for (h, u) in h_j.iter().zip(controls) {
        if *h >= epsilon {
            let w = h - epsilon;
            total += w;
            acc += u * w;
        }
    }
    if total > 0.0 {
        Ok(acc / total)
    } else {
        Err(ShieldError::NoActiveBackup)
    }
}

/// Switching state owned by one environment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ShieldState {
    /// Backup used when `γ ≤ 0`; chosen as the largest `h_j` on the first query.
    pub q: Option<usize>,
    /// Sign of `γ` at the previous query.
    pub prev_gamma_positive: Option<bool>,
}

impl ShieldState {
    pub fn new() -> Self {
        Self::default()
    }

    /// Starts with a fixed backup index.
    pub fn with_backup(q: usize) -> Self {
        Self { q: Some(q), prev_gamma_positive: None }
    }
}

/// Which branch produced the control.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShieldBranch {
    /// `γ > 0`: blend of the augmented backup control and the QP solution.
    Blended,
    /// `γ ≤ 0`: backup `q` verbatim.
    Backup,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShieldOutput<const N: usize, const M: usize> {
    pub u: Vector<M>,
    pub eval: BarrierEvaluation<N, M>,
    pub state: ShieldState,
    pub branch: ShieldBranch,
    pub qp: Option<QpResult<M>>,
    /// `σ(γ)` on the blended branch, zero otherwise.
    pub blend: f64,
    /// Whether `q` was reassigned at this query.
    pub switched: bool,
}

fn argmax(values: &[f64]) -> usize {
    values
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (j, v)| if *v > best.1 { (j, *v) } else { best })
        .0
}

/// One shield query at state `x` for desired control `u_d`.
pub fn shield_control<S: SystemModel<N, M>, const N: usize, const M: usize>(
    barrier: &Barrier<'_, S, N, M>,
    u_d: &Vector<M>,
    x: &Vector<N>,
    state: ShieldState,
) -> Result<ShieldOutput<N, M>> {
    let cfg = barrier.config();
    let eval = barrier.evaluate(x, LieMode::WhenNeeded)?;
    let positive = eval.gamma > 0.0;
    let mut q = state.q.unwrap_or_else(|| argmax(&eval.h_j));
    let mut switched = false;
    if state.prev_gamma_positive.is_some_and(|p| p != positive) {
        // Smallest index with h_j ≥ ε; the largest h_j when none qualifies.
        let next = eval.h_j.iter().position(|h| *h >= cfg.epsilon).unwrap_or_else(|| argmax(&eval.h_j));
        switched = next != q;
        q = next;
    }
    let next_state = ShieldState { q: Some(q), prev_gamma_positive: Some(positive) };
    let sys = barrier.system();
    let suite = barrier.suite();
    let control_box = sys.control_box();

    if positive {
        let controls: Vec<Vector<M>> = (0..suite.len()).map(|j| suite.policy(j).control(x)).collect();
        let u_a = augmented_backup_control(&eval.h_j, &controls, cfg.epsilon)?;
        let qp = solve_safety_qp(&eval, u_d, control_box, cfg.alpha, cfg.epsilon);
        if qp.status == QpStatus::Optimal {
            let s = sigma(eval.gamma);
            let u = control_box.clamp(&(u_a * (1.0 - s) + qp.u_star * s));
            return Ok(ShieldOutput {
                u,
                eval,
                state: next_state,
                branch: ShieldBranch::Blended,
                qp: Some(qp),
                blend: s,
                switched,
            });
        }
    }
    let u = control_box.clamp(&suite.policy(q).control(x));
    Ok(ShieldOutput { u, eval, state: next_state, branch: ShieldBranch::Backup, qp: None, blend: 0.0, switched })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backup::{make_pendulum_suite, BackupSuite, HomotopyXi, MlpPolicy, NeuralBackup, ScreeningConfig, PENDULUM_GAIN};
    use crate::barrier::{BarrierConfig, SoftParams};
    use crate::dynamics::{advance, make_pendulum, ConstantPolicy, FlowConfig, ScalarField};
    use crate::nn::Activation;
    use crate::pendulum::PendulumSafeSet;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn suite(seed: u64) -> BackupSuite<2, 1> {
        let sys = make_pendulum();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let neural = NeuralBackup {
            policy: MlpPolicy::random(&[16, 16], 1, Activation::Tanh, sys.control_box(), &mut rng).unwrap(),
            xi: HomotopyXi::new(0.005).unwrap(),
            rho: 1000.0,
        };
        make_pendulum_suite(&sys, PENDULUM_GAIN, Some(neural), &ScreeningConfig { rollouts: 0, ..Default::default() }).unwrap()
    }

    fn cfg() -> BarrierConfig {
        BarrierConfig {
            flow: FlowConfig::new(2.0, 100, 2).unwrap(),
            soft: SoftParams { rho_min: 1000.0, rho_max: 1000.0 },
            epsilon: 0.002,
            alpha: 5.0,
            kappa_h: 0.005,
            kappa_beta: 0.05,
            ..Default::default()
        }
    }

    fn grid_qp(a: &Vector<2>, c: f64, u_d: &Vector<2>, bx: &AdmissibleBox<2>, n: usize) -> Option<f64> {
        let (lo, hi) = (bx.lower(), bx.upper());
        let mut best: Option<f64> = None;
        for i in 0..n {
            for k in 0..n {
                let u = Vector::<2>::new(
                    lo[0] + (hi[0] - lo[0]) * i as f64 / (n - 1) as f64,
                    lo[1] + (hi[1] - lo[1]) * k as f64 / (n - 1) as f64,
                );
                if a.dot(&u) >= c {
                    let obj = (u - u_d).norm_squared();
                    best = Some(best.map_or(obj, |b: f64| b.min(obj)));
                }
            }
        }
        best
    }

    #[test]
    fn qp_inactive_constraint_returns_desired() {
        let bx = AdmissibleBox::<1>::symmetric(1.5).unwrap();
        let r = solve_box_halfspace_qp(&Vector::<1>::new(2.0), -1.0, &Vector::<1>::new(0.3), &bx);
        assert_eq!(r.u_star[0], 0.3);
        assert_eq!(r.objective, 0.0);
        assert_eq!(r.status, QpStatus::Optimal);
    }

    #[test]
    fn qp_projects_onto_half_line() {
        // L_f h + α(h - ε) = -1, L_g h = 2: û ≥ 0.5.
        let bx = AdmissibleBox::<1>::symmetric(1.5).unwrap();
        let r = solve_box_halfspace_qp(&Vector::<1>::new(2.0), 1.0, &Vector::<1>::zeros(), &bx);
        assert_eq!(r.u_star[0], 0.5);
        assert!(r.constraint_slack >= -1e-12);
        let r = solve_box_halfspace_qp(&Vector::<1>::new(2.0), 4.0, &Vector::<1>::zeros(), &bx);
        assert_eq!(r.status, QpStatus::Infeasible);
    }

    #[test]
    fn qp_matches_grid_search() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let bx = AdmissibleBox::<2>::new(Vector::<2>::new(-1.0, -2.0), Vector::<2>::new(1.5, 1.0)).unwrap();
        let n = 200;
        let cell = (2.5f64 / (n - 1) as f64).hypot(3.0 / (n - 1) as f64);
        for _ in 0..200 {
            let a = Vector::<2>::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
            let u_d = Vector::<2>::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
            let c = rng.random_range(-2.0..3.0);
            let r = solve_box_halfspace_qp(&a, c, &u_d, &bx);
            let grid = grid_qp(&a, c, &u_d, &bx, n);
            match (r.status, grid) {
                (QpStatus::Optimal, Some(g)) => {
                    assert!(bx.contains(&r.u_star) && r.constraint_slack >= -1e-9);
                    assert!(r.objective <= g + 1e-12, "{a:?} {c} {u_d:?} {r:?} {g}");
                    let d = (g.sqrt() - r.objective.sqrt()).abs();
                    assert!(d <= 2.0 * cell + 1e-9, "grid {g} vs {}", r.objective);
                }
                (QpStatus::Infeasible, None) => {}
                (QpStatus::Optimal, None) => assert!(r.constraint_slack >= -1e-9),
                (QpStatus::Infeasible, Some(_)) => panic!("solver infeasible but grid found a point"),
            }
        }
    }

    #[test]
    fn augmented_control_weights() {
        let u = [Vector::<1>::new(1.0), Vector::<1>::new(-1.0), Vector::<1>::new(0.5)];
        assert_eq!(augmented_backup_control(&[0.5, -1.0, -1.0], &u, 0.1).unwrap()[0], 1.0);
        assert_eq!(augmented_backup_control(&[0.3, 0.3, -1.0], &u, 0.1).unwrap()[0], 0.0);
        // Weights 1, 2, 3: (1·1 + 2·(-1) + 3·0.5) / 6 = 0.5 / 6.
        let v = augmented_backup_control(&[1.0, 2.0, 3.0], &u, 0.0).unwrap()[0];
        assert!((v - 0.5 / 6.0).abs() < 1e-15);
        assert!(augmented_backup_control(&[-1.0, -1.0, -1.0], &u, 0.0).is_err());
    }

    #[test]
    fn sigma_profile() {
        assert_eq!(sigma(-1.0), 0.0);
        assert_eq!(sigma(0.0), 0.0);
        assert_eq!(sigma(1.0), 1.0);
        assert_eq!(sigma(4.0), 1.0);
        assert!(sigma(0.3) < sigma(0.6));
    }

    #[test]
    fn backup_branch_returns_backup_control() {
        let sys = make_pendulum();
        let s = suite(2);
        let b = Barrier::new(&sys, &s, &PendulumSafeSet, cfg()).unwrap();
        let x = Vector::<2>::new(2.9, 1.0);
        let out = shield_control(&b, &Vector::<1>::new(1.5), &x, ShieldState::with_backup(1)).unwrap();
        assert!(out.eval.gamma <= 0.0);
        assert_eq!(out.branch, ShieldBranch::Backup);
        assert_eq!(out.u, s.policy(1).control(&x));
    }

    #[test]
    fn interior_returns_desired_control() {
        let sys = make_pendulum();
        let s = suite(3);
        let b = Barrier::new(&sys, &s, &PendulumSafeSet, cfg()).unwrap();
        let x = Vector::<2>::zeros();
        let u_d = s.policy(0).control(&x);
        let out = shield_control(&b, &u_d, &x, ShieldState::new()).unwrap();
        assert!(out.eval.gamma >= 1.0, "gamma {}", out.eval.gamma);
        assert_eq!(out.u, u_d);
    }

    #[test]
    fn output_is_always_admissible() {
        let sys = make_pendulum();
        let s = suite(4);
        let b = Barrier::new(&sys, &s, &PendulumSafeSet, BarrierConfig { flow: FlowConfig::new(2.0, 40, 1).unwrap(), ..cfg() }).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut state = ShieldState::new();
        for _ in 0..300 {
            let x = Vector::<2>::new(rng.random_range(-3.3..3.3), rng.random_range(-2.4..2.4));
            let u_d = Vector::<1>::new(rng.random_range(-10.0..10.0));
            let out = shield_control(&b, &u_d, &x, state).unwrap();
            assert!(sys.control_box().contains(&out.u));
            state = out.state;
        }
    }

    #[test]
    fn q_changes_only_on_gamma_sign_flips() {
        let sys = make_pendulum();
        let s = suite(6);
        let b = Barrier::new(&sys, &s, &PendulumSafeSet, cfg()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut x = Vector::<2>::new(0.05, 0.0);
        let mut state = ShieldState::new();
        let mut prev_u: Option<f64> = None;
        for _ in 0..300 {
            let u_d = Vector::<1>::new(if rng.random_bool(0.5) { 1.5 } else { -1.5 });
            let out = shield_control(&b, &u_d, &x, state).unwrap();
            let flipped = state.prev_gamma_positive.is_some_and(|p| p != (out.eval.gamma > 0.0));
            if state.q.is_some() && out.state.q != state.q {
                assert!(flipped);
            }
            if let Some(p) = prev_u {
                assert!((out.u[0] - p).abs() <= 3.0);
            }
            prev_u = Some(out.u[0]);
            state = out.state;
            x = advance(&sys, &ConstantPolicy(out.u), &x, 0.01, 1).unwrap();
            assert!(PendulumSafeSet.value(&x) >= 0.0);
        }
    }
}

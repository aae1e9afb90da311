//! Spot checks of the safety machinery on random states, run by
//! `rlbus verify`. Each check reports a pass flag and the worst case seen.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rlbus_core::backup::BackupSuite;
use rlbus_core::barrier::GradientMethod;
use rlbus_core::dynamics::{advance, ConstantPolicy, ScalarField, SystemModel, Vector};
use rlbus_core::shield::{shield_control, ShieldState};
use serde::Serialize;

use crate::benchmark::{state_box, Benchmark};
use crate::Result;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyReport {
    pub checks: Vec<Check>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VerifySettings {
    /// Random states per pointwise check.
    pub samples: usize,
    /// Shielded rollouts from certified states.
    pub rollouts: usize,
    pub rollout_steps: usize,
    pub seed: u64,
}

impl Default for VerifySettings {
    fn default() -> Self {
        Self { samples: 200, rollouts: 10, rollout_steps: 500, seed: 0 }
    }
}

fn random_state(rng: &mut ChaCha8Rng) -> Vector<2> {
    let (lo, hi) = state_box();
    Vector::<2>::from_fn(|i, _| rng.random_range(lo[i]..=hi[i]))
}

pub fn run_verify(bench: &Benchmark, suite: &BackupSuite<2, 1>, s: &VerifySettings) -> Result<VerifyReport> {
    let barrier = bench.barrier(suite)?;
    let cfg = *barrier.config();
    let control_box = bench.sys.control_box();
    let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
    let mut checks = Vec::new();

    // Shield output always admissible, even for wild desired controls.
    let mut worst_excess: f64 = 0.0;
    for _ in 0..s.samples {
        let x = random_state(&mut rng);
        let u_d = Vector::<1>::new(rng.random_range(-10.0..=10.0));
        let u = shield_control(&barrier, &u_d, &x, ShieldState::new())?.u;
        worst_excess = worst_excess.max((u[0].abs() - control_box.upper()[0]).max(0.0));
    }
    checks.push(Check {
        name: "shield_output_admissible",
        passed: worst_excess == 0.0,
        detail: format!("largest excess over the bound {worst_excess:.3e}"),
    });

    // The smooth value never exceeds its hard counterpart on the same samples.
    let mut worst_gap = f64::NEG_INFINITY;
    for _ in 0..s.samples {
        let x = random_state(&mut rng);
        let gap = barrier.h_value(&x)?.h - barrier.h_star_exact(&x, &cfg.flow)?;
        worst_gap = worst_gap.max(gap);
    }
    checks.push(Check {
        name: "smooth_value_below_hard_value",
        passed: worst_gap <= 1e-12,
        detail: format!("largest h - h_star {worst_gap:.3e}"),
    });

    // Forward and adjoint sensitivities agree.
    let mut worst_rel: f64 = 0.0;
    for _ in 0..s.samples.min(50) {
        let x = random_state(&mut rng);
        let gf = barrier.grad_h(&x, GradientMethod::Forward)?;
        let ga = barrier.grad_h(&x, GradientMethod::Adjoint)?;
        worst_rel = worst_rel.max((gf - ga).norm() / gf.norm().max(1e-8));
    }
    checks.push(Check {
        name: "forward_adjoint_gradients_agree",
        passed: worst_rel <= 1e-6,
        detail: format!("largest relative gap {worst_rel:.3e}"),
    });

    // Shielded rollouts from certified states stay safe under an adversarial
    // desired control.
    let safe = bench.safe_set();
    let mut min_safe = f64::INFINITY;
    for _ in 0..s.rollouts {
        let mut x = loop {
            let x = random_state(&mut rng);
            if barrier.h_value(&x)?.h >= cfg.epsilon {
                break x;
            }
        };
        let mut state = ShieldState::new();
        for _ in 0..s.rollout_steps {
            let push = if x[0] >= 0.0 { 1.5 } else { -1.5 };
            let out = shield_control(&barrier, &Vector::<1>::new(push), &x, state)?;
            state = out.state;
            x = advance(&bench.sys, &ConstantPolicy(out.u), &x, bench.cfg.mdp.dt, bench.cfg.mdp.substeps)?;
            min_safe = min_safe.min(safe.value(&x));
        }
    }
    checks.push(Check {
        name: "shielded_rollouts_stay_safe",
        passed: min_safe >= 0.0,
        detail: format!("smallest safe-set value {min_safe:.4}"),
    });
    Ok(VerifyReport { checks })
}

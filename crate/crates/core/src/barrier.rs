//! Barrier functions built from sampled backup flows.
//!
//! For backup `j`, `h_j(x)` is the soft minimum of the safe-set function along
//! the sampled flow under `u_bj` together with the backup-set function at the
//! final sample. `h(x)` is the soft maximum of all `h_j`.

use thiserror::Error;

use crate::backup::BackupSuite;
use crate::dynamics::{
    adjoint_with_checkpoints, flow, flow_sensitivity_forward, AdmissibleBox, DynamicsError, FlowConfig, Policy,
    ScalarField, SystemModel, Vector,
};
use crate::soft::{softmax, softmax_weights, softmin, softmin_weights, SoftError};

#[derive(Debug, Error)]
pub enum BarrierError {
    #[error("invalid barrier configuration: {0}")]
    Config(String),
    #[error("backup index {0} out of range")]
    BadIndex(usize),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Soft(#[from] SoftError),
}

pub type Result<T> = std::result::Result<T, BarrierError>;

/// Per-backup sampled flows, `bundle[j][i] = φ_{u_bj}(x, iT_s)`.
pub type TrajectoryBundle<const N: usize> = Vec<Vec<Vector<N>>>;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SoftParams {
    /// Soft-minimum sharpness along each flow.
    pub rho_min: f64,
    /// Soft-maximum sharpness across backups.
    pub rho_max: f64,
}

impl Default for SoftParams {
    fn default() -> Self {
        Self { rho_min: 100.0, rho_max: 100.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GradientMethod {
    Forward,
    #[default]
    Adjoint,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BarrierConfig {
    pub flow: FlowConfig,
    pub soft: SoftParams,
    pub epsilon: f64,
    pub alpha: f64,
    pub kappa_h: f64,
    pub kappa_beta: f64,
    pub gradient: GradientMethod,
}

impl Default for BarrierConfig {
    fn default() -> Self {
        Self {
            flow: FlowConfig::default(),
            soft: SoftParams::default(),
            epsilon: 0.0,
            alpha: 5.0,
            kappa_h: 1.0,
            kappa_beta: 1.0,
            gradient: GradientMethod::default(),
        }
    }
}

impl BarrierConfig {
    pub fn validate(&self) -> Result<()> {
        self.flow.validate()?;
        let positive = [
            ("rho_min", self.soft.rho_min),
            ("rho_max", self.soft.rho_max),
            ("alpha", self.alpha),
            ("kappa_h", self.kappa_h),
            ("kappa_beta", self.kappa_beta),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(BarrierError::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.epsilon.is_finite() && self.epsilon >= 0.0) {
            return Err(BarrierError::Config(format!("epsilon must be non-negative, got {}", self.epsilon)));
        }
        Ok(())
    }
}

/// Gradient of `h` and the quantities derived from it.
#[derive(Debug, Clone, PartialEq)]
pub struct LieTerms<const N: usize, const M: usize> {
    pub grad_h: Vector<N>,
    pub lf_h: f64,
    pub lg_h: Vector<M>,
    pub beta: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BarrierEvaluation<const N: usize, const M: usize> {
    pub h_j: Vec<f64>,
    pub h: f64,
    pub bundle: TrajectoryBundle<N>,
    /// Absent when skipped because `h ≤ ε` already decides `γ ≤ 0`.
    pub lie: Option<LieTerms<N, M>>,
    /// Feasibility margin. Without Lie terms this is `(h - ε)/κ_h`, an upper
    /// bound on the exact value that shares its sign.
    pub gamma: f64,
}

/// When to compute the gradient of `h`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LieMode {
    Always,
    /// Only when `h > ε`, i.e. when `γ` could be positive.
    WhenNeeded,
}

/// `L_f h + α(h - ε) + max_{û ∈ U} L_g h û`.
pub fn beta_value<const M: usize>(lf_h: f64, lg_h: &Vector<M>, h: f64, control_box: &AdmissibleBox<M>, cfg: &BarrierConfig) -> f64 {
    lf_h + cfg.alpha * (h - cfg.epsilon) + control_box.max_linear(lg_h)
}

/// Lipschitz quantities behind the sampling margin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplingMargin {
    /// Largest closed-loop speed over the box.
    pub flow_speed: f64,
    /// Largest safe-set gradient norm over the box.
    pub safe_lipschitz: f64,
    /// `½ T_s · flow_speed · safe_lipschitz`.
    pub epsilon_s: f64,
}

pub struct Barrier<'a, S, const N: usize, const M: usize> {
    sys: &'a S,
    suite: &'a BackupSuite<N, M>,
    safe: &'a dyn ScalarField<N>,
    cfg: BarrierConfig,
}

impl<'a, S: SystemModel<N, M>, const N: usize, const M: usize> Barrier<'a, S, N, M> {
    pub fn new(sys: &'a S, suite: &'a BackupSuite<N, M>, safe: &'a dyn ScalarField<N>, cfg: BarrierConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self { sys, suite, safe, cfg })
    }

    pub fn config(&self) -> &BarrierConfig {
        &self.cfg
    }

    pub fn system(&self) -> &S {
        self.sys
    }

    pub fn suite(&self) -> &BackupSuite<N, M> {
        self.suite
    }

    pub fn safe_set(&self) -> &dyn ScalarField<N> {
        self.safe
    }

    fn check_index(&self, j: usize) -> Result<()> {
        if j < self.suite.len() {
            Ok(())
        } else {
            Err(BarrierError::BadIndex(j))
        }
    }

    /// Soft-minimum arguments for a sampled flow of backup `j`.
    fn flow_terms(&self, j: usize, samples: &[Vector<N>]) -> Vec<f64> {
        let mut z: Vec<f64> = samples.iter().map(|x| self.safe.value(x)).collect();
        z.push(self.suite.set_value(j, samples.last().expect("flow has samples")));
        z
    }

    /// `h_j(x)` with the flow it was computed from.
    pub fn h_j_value(&self, j: usize, x: &Vector<N>) -> Result<(f64, Vec<Vector<N>>)> {
        self.check_index(j)?;
        let samples = flow(self.sys, &self.suite.policy(j), x, &self.cfg.flow)?;
        let v = softmin(self.cfg.soft.rho_min, &self.flow_terms(j, &samples))?;
        Ok((v, samples))
    }

    /// All `h_j` and `h`, without gradients.
    pub fn h_value(&self, x: &Vector<N>) -> Result<BarrierEvaluation<N, M>> {
        let mut h_j = Vec::with_capacity(self.suite.len());
        let mut bundle = Vec::with_capacity(self.suite.len());
        for j in 0..self.suite.len() {
            let (v, samples) = self.h_j_value(j, x)?;
            h_j.push(v);
            bundle.push(samples);
        }
        let h = softmax(self.cfg.soft.rho_max, &h_j)?;
        let gamma = (h - self.cfg.epsilon) / self.cfg.kappa_h;
        Ok(BarrierEvaluation { h_j, h, bundle, lie: None, gamma })
    }

    /// Per-sample cotangents of `h_j` with respect to the flow samples.
    fn cotangents(&self, j: usize, samples: &[Vector<N>]) -> Result<Vec<(usize, Vector<N>)>> {
        let z = self.flow_terms(j, samples);
        let w = softmin_weights(self.cfg.soft.rho_min, &z)?;
        let last = samples.len() - 1;
        let mut out: Vec<(usize, Vector<N>)> = samples
            .iter()
            .enumerate()
            .filter(|(i, _)| w[*i] != 0.0)
            .map(|(i, s)| (i, self.safe.gradient(s) * w[i]))
            .collect();
        if w[last + 1] != 0.0 {
            out.push((last, self.suite.set_gradient(j, &samples[last]) * w[last + 1]));
        }
        Ok(out)
    }

    /// `∇h_j(x)` given its already computed flow.
    fn grad_h_j(&self, j: usize, x: &Vector<N>, samples: &[Vector<N>], method: GradientMethod) -> Result<Vector<N>> {
        let cot = self.cotangents(j, samples)?;
        if cot.is_empty() {
            return Ok(Vector::zeros());
        }
        let policy = self.suite.policy(j);
        Ok(match method {
            GradientMethod::Adjoint => adjoint_with_checkpoints(self.sys, &policy, samples, &self.cfg.flow, &cot)?,
            GradientMethod::Forward => {
                let (_, qs) = flow_sensitivity_forward(self.sys, &policy, x, &self.cfg.flow)?;
                cot.iter().map(|(i, v)| qs[*i].tr_mul(v)).sum()
            }
        })
    }

    /// `∇h(x)` from an evaluation's values and flows.
    fn gradient_from(&self, x: &Vector<N>, eval: &BarrierEvaluation<N, M>, method: GradientMethod) -> Result<Vector<N>> {
        let v = softmax_weights(self.cfg.soft.rho_max, &eval.h_j)?;
        let mut g = Vector::<N>::zeros();
        for (j, w) in v.iter().enumerate() {
            if *w != 0.0 {
                g += self.grad_h_j(j, x, &eval.bundle[j], method)? * *w;
            }
        }
        Ok(g)
    }

    /// `∇h(x)` by the requested sensitivity method.
    pub fn grad_h(&self, x: &Vector<N>, method: GradientMethod) -> Result<Vector<N>> {
        let eval = self.h_value(x)?;
        self.gradient_from(x, &eval, method)
    }

    /// Values, and Lie terms per `mode`.
    pub fn evaluate(&self, x: &Vector<N>, mode: LieMode) -> Result<BarrierEvaluation<N, M>> {
        let mut eval = self.h_value(x)?;
        if mode == LieMode::WhenNeeded && eval.h <= self.cfg.epsilon {
            return Ok(eval);
        }
        let grad_h = self.gradient_from(x, &eval, self.cfg.gradient)?;
        let lf_h = grad_h.dot(&self.sys.drift(x));
        let lg_h = self.sys.actuation(x).tr_mul(&grad_h);
        let beta = beta_value(lf_h, &lg_h, eval.h, self.sys.control_box(), &self.cfg);
        eval.gamma = ((eval.h - self.cfg.epsilon) / self.cfg.kappa_h).min(beta / self.cfg.kappa_beta);
        eval.lie = Some(LieTerms { grad_h, lf_h, lg_h, beta });
        Ok(eval)
    }

    /// Hard counterpart of `h_j` on a (finer) sampling grid: the minimum of the
    /// safe-set function along the flow and the backup-set function at the end.
    pub fn h_star_j(&self, j: usize, x: &Vector<N>, fine: &FlowConfig) -> Result<f64> {
        self.check_index(j)?;
        let samples = flow(self.sys, &self.suite.policy(j), x, fine)?;
        Ok(self.flow_terms(j, &samples).into_iter().fold(f64::INFINITY, f64::min))
    }

    /// `max_j` of [`Self::h_star_j`].
    pub fn h_star_exact(&self, x: &Vector<N>, fine: &FlowConfig) -> Result<f64> {
        let mut best = f64::NEG_INFINITY;
        for j in 0..self.suite.len() {
            best = best.max(self.h_star_j(j, x, fine)?);
        }
        Ok(best)
    }

    /// Sampling margin from grid maxima over `[lower, upper]` with `per_dim`
    /// nodes per axis. For the neural backup the speed bound is taken over all
    /// box vertices of the control set, so the margin stays valid as the
    /// network trains.
    pub fn epsilon_s_estimate(&self, lower: &Vector<N>, upper: &Vector<N>, per_dim: usize) -> SamplingMargin {
        let per_dim = per_dim.max(2);
        let vertices = self.sys.control_box().vertices();
        let mut speed: f64 = 0.0;
        let mut lip: f64 = 0.0;
        for flat in 0..per_dim.pow(N as u32) {
            let mut rem = flat;
            let x = Vector::<N>::from_fn(|i, _| {
                let k = rem % per_dim;
                rem /= per_dim;
                lower[i] + (upper[i] - lower[i]) * k as f64 / (per_dim - 1) as f64
            });
            for j in 0..self.suite.designed_len() {
                let u = self.suite.policy(j).control(&x);
                speed = speed.max(self.sys.closed_loop(&x, &u).norm());
            }
            if self.suite.neural().is_some() {
                for u in &vertices {
                    speed = speed.max(self.sys.closed_loop(&x, u).norm());
                }
            }
            lip = lip.max(self.safe.gradient(&x).norm());
        }
        SamplingMargin {
            flow_speed: speed,
            safe_lipschitz: lip,
            epsilon_s: 0.5 * self.cfg.flow.sample_spacing() * speed * lip,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backup::{make_pendulum_suite, HomotopyXi, MlpPolicy, NeuralBackup, ScreeningConfig, PENDULUM_GAIN};
    use crate::dynamics::{make_pendulum, Matrix};
    use crate::nn::Activation;
    use crate::pendulum::{PendulumSafeSet, STATE_BOX_LOWER, STATE_BOX_UPPER};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn suite(neural_seed: Option<u64>) -> BackupSuite<2, 1> {
        let sys = make_pendulum();
        let neural = neural_seed.map(|s| {
            let mut rng = ChaCha8Rng::seed_from_u64(s);
            NeuralBackup {
                policy: MlpPolicy::random(&[16, 16], 1, Activation::Tanh, sys.control_box(), &mut rng).unwrap(),
                xi: HomotopyXi::new(0.005).unwrap(),
                rho: 100.0,
            }
        });
        let quick = ScreeningConfig { rollouts: 0, ..Default::default() };
        make_pendulum_suite(&sys, PENDULUM_GAIN, neural, &quick).unwrap()
    }

    fn cfg() -> BarrierConfig {
        BarrierConfig { flow: FlowConfig::new(1.0, 50, 2).unwrap(), ..Default::default() }
    }

    #[test]
    fn constant_trajectory_value() {
        let sys = make_pendulum();
        let s = suite(None);
        let b = Barrier::new(&sys, &s, &PendulumSafeSet, cfg()).unwrap();
        let (v, samples) = b.h_j_value(0, &Vector::<2>::zeros()).unwrap();
        assert!(samples.iter().all(|x| *x == Vector::<2>::zeros()));
        let mut z = vec![1.0; 51];
        z.push(0.02);
        assert_eq!(v, softmin(100.0, &z).unwrap());
        assert!(v <= 0.02);
        assert!(b.h_j_value(5, &Vector::<2>::zeros()).is_err());
    }

    #[test]
    fn unsafe_state_gives_negative_values() {
        let sys = make_pendulum();
        let s = suite(Some(1));
        let b = Barrier::new(&sys, &s, &PendulumSafeSet, cfg()).unwrap();
        let e = b.h_value(&Vector::<2>::new(3.0, 0.5)).unwrap();
        assert!(e.h_j.iter().all(|v| *v < 0.0));
        assert!(e.h < 0.0);
    }

    #[test]
    fn softmax_sandwich_at_origin() {
        let sys = make_pendulum();
        let s = suite(Some(2));
        let b = Barrier::new(&sys, &s, &PendulumSafeSet, cfg()).unwrap();
        let e = b.h_value(&Vector::<2>::zeros()).unwrap();
        let max = e.h_j.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(e.h_j.len(), 3);
        assert!(e.h <= max && e.h >= max - 3f64.ln() / 100.0);
        assert_eq!(e.h, softmax(100.0, &e.h_j).unwrap());
    }

    #[test]
    fn single_backup_h_equals_h_1() {
        let sys = make_pendulum();
        let full = suite(None);
        let one = one_backup_suite();
        let b = Barrier::new(&sys, &one, &PendulumSafeSet, cfg()).unwrap();
        let x = Vector::<2>::new(0.2, -0.1);
        let e = b.h_value(&x).unwrap();
        assert_eq!(e.h, e.h_j[0]);
        let b_full = Barrier::new(&sys, &full, &PendulumSafeSet, cfg()).unwrap();
        assert_eq!(b_full.h_j_value(0, &x).unwrap().0, e.h_j[0]);
    }

    fn random_states(n: usize, seed: u64) -> Vec<Vector<2>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| Vector::<2>::new(rng.random_range(-1.5..2.5), rng.random_range(-1.5..1.5))).collect()
    }

    #[test]
    fn gradient_methods_agree() {
        let sys = make_pendulum();
        let s = suite(Some(3));
        let b = Barrier::new(&sys, &s, &PendulumSafeSet, cfg()).unwrap();
        for x in random_states(20, 4) {
            let f = b.grad_h(&x, GradientMethod::Forward).unwrap();
            let a = b.grad_h(&x, GradientMethod::Adjoint).unwrap();
            assert!((f - a).norm() <= 1e-6 * f.norm().max(1e-12), "{x:?}: {f} vs {a}");
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let sys = make_pendulum();
        let s = suite(Some(5));
        let b = Barrier::new(&sys, &s, &PendulumSafeSet, cfg()).unwrap();
        let eps = 1e-5;
        for x in random_states(20, 6) {
            let g = b.grad_h(&x, GradientMethod::Adjoint).unwrap();
            let mut fd = Vector::<2>::zeros();
            for c in 0..2 {
                let mut e = Vector::<2>::zeros();
                e[c] = eps;
                fd[c] = (b.h_value(&(x + e)).unwrap().h - b.h_value(&(x - e)).unwrap().h) / (2.0 * eps);
            }
            assert!((g - fd).norm() <= 1e-4 * fd.norm().max(1e-6), "{x:?}: {g} vs {fd}");
        }
    }

    struct LinearSafe(Vector<2>);

    impl ScalarField<2> for LinearSafe {
        fn value(&self, x: &Vector<2>) -> f64 {
            1.0 + self.0.dot(x)
        }
        fn gradient(&self, _x: &Vector<2>) -> Vector<2> {
            self.0
        }
    }

    fn one_backup_suite() -> BackupSuite<2, 1> {
        let sys = make_pendulum();
        let set = crate::backup::pendulum_backup_sets()[0].clone();
        let k = Matrix::<1, 2>::new(PENDULUM_GAIN[0], PENDULUM_GAIN[1]);
        let policy = crate::backup::SaturatedLinearPolicy::new(k, *set.center(), sys.control_box()).unwrap();
        BackupSuite::new(vec![crate::backup::DesignedBackup { set: Box::new(set), policy: Box::new(policy) }], None).unwrap()
    }

    fn expm(a: &Matrix<2, 2>) -> Matrix<2, 2> {
        let norm = a.abs().row_sum().max();
        let s = if norm > 0.5 { (norm / 0.5).log2().ceil() as i32 } else { 0 };
        let b = a / 2f64.powi(s);
        let mut term = Matrix::<2, 2>::identity();
        let mut sum = term;
        for k in 1..30 {
            term = term * b / k as f64;
            sum += term;
        }
        for _ in 0..s {
            sum = sum * sum;
        }
        sum
    }

    #[test]
    fn gradient_on_constant_trajectory() {
        // The flow rests at the equilibrium x_b1, so Q_i = exp(J iT_s) with J
        // the closed-loop Jacobian there; ∇h_b1 vanishes at the center.
        let sys = make_pendulum();
        let s = one_backup_suite();
        let c = Vector::<2>::new(0.3, -0.2);
        let safe = LinearSafe(c);
        let cfg = cfg();
        let b = Barrier::new(&sys, &s, &safe, cfg).unwrap();
        let x = Vector::<2>::zeros();
        let g = b.grad_h(&x, GradientMethod::Forward).unwrap();

        let j = Matrix::<2, 2>::new(0.0, 1.0, 1.0 + PENDULUM_GAIN[0], PENDULUM_GAIN[1]);
        let mut z = vec![1.0; cfg.flow.samples + 1];
        z.push(0.02);
        let w = softmin_weights(cfg.soft.rho_min, &z).unwrap();
        let expected: Vector<2> = (0..=cfg.flow.samples)
            .map(|i| expm(&(j * (i as f64 * cfg.flow.sample_spacing()))).tr_mul(&c) * w[i])
            .sum();
        assert!((g - expected).norm() <= 1e-5 * expected.norm().max(1e-300), "{g} vs {expected}");
    }

    #[test]
    fn lie_terms_and_beta() {
        let sys = make_pendulum();
        let s = suite(Some(7));
        let b = Barrier::new(&sys, &s, &PendulumSafeSet, cfg()).unwrap();
        let x = Vector::<2>::new(0.05, 0.02);
        let e = b.evaluate(&x, LieMode::Always).unwrap();
        let lie = e.lie.as_ref().unwrap();
        assert_eq!(lie.lf_h, lie.grad_h.dot(&sys.drift(&x)));
        assert_eq!(lie.lg_h[0], lie.grad_h[1]);
        let c = b.config();
        let expected = lie.lf_h + c.alpha * (e.h - c.epsilon) + 1.5 * lie.lg_h[0].abs();
        assert!((lie.beta - expected).abs() < 1e-15);
        assert_eq!(e.gamma, ((e.h - c.epsilon) / c.kappa_h).min(lie.beta / c.kappa_beta));
    }

    #[test]
    fn beta_closed_form() {
        let bx = AdmissibleBox::<1>::symmetric(1.5).unwrap();
        let c = BarrierConfig { epsilon: 0.1, ..Default::default() };
        assert_eq!(beta_value(0.3, &Vector::<1>::zeros(), 0.5, &bx, &c), 0.3 + 5.0 * 0.4);
        assert_eq!(beta_value(0.0, &Vector::<1>::new(2.0), 0.1, &bx, &c), 3.0);

        let bx2 = AdmissibleBox::<2>::new(Vector::<2>::new(-1.0, -0.5), Vector::<2>::new(2.0, 1.5)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let lg = Vector::<2>::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
            let closed = beta_value(0.0, &lg, 0.0, &bx2, &BarrierConfig::default());
            let mut best = f64::NEG_INFINITY;
            for a in 0..100 {
                for bb in 0..100 {
                    let u = Vector::<2>::new(-1.0 + 3.0 * a as f64 / 99.0, -0.5 + 2.0 * bb as f64 / 99.0);
                    best = best.max(lg.dot(&u));
                }
            }
            assert!((closed - best).abs() < 1e-9);
        }
    }

    #[test]
    fn lazy_mode_skips_gradient_below_margin() {
        let sys = make_pendulum();
        let s = suite(Some(8));
        let c = BarrierConfig { epsilon: 0.001, ..cfg() };
        let b = Barrier::new(&sys, &s, &PendulumSafeSet, c).unwrap();
        let e = b.evaluate(&Vector::<2>::new(2.8, 1.5), LieMode::WhenNeeded).unwrap();
        assert!(e.lie.is_none() && e.gamma <= 0.0);
    }

    #[test]
    fn sampling_margin_scales_with_spacing() {
        let sys = make_pendulum();
        let s = suite(Some(9));
        let lo = Vector::<2>::from(STATE_BOX_LOWER);
        let hi = Vector::<2>::from(STATE_BOX_UPPER);
        let b1 = Barrier::new(&sys, &s, &PendulumSafeSet, cfg()).unwrap();
        let c2 = BarrierConfig { flow: cfg().flow.refined(2), ..cfg() };
        let b2 = Barrier::new(&sys, &s, &PendulumSafeSet, c2).unwrap();
        let m1 = b1.epsilon_s_estimate(&lo, &hi, 51);
        let m2 = b2.epsilon_s_estimate(&lo, &hi, 51);
        assert!((m1.epsilon_s - 2.0 * m2.epsilon_s).abs() < 1e-15);
        // Vertex bound: |φ̇| ≤ 2.4, |sin φ + u| ≤ 2.5.
        assert!(m1.flow_speed <= (2.4f64.powi(2) + 2.5f64.powi(2)).sqrt() + 1e-12);
        assert!(m1.safe_lipschitz > 0.49 && m1.safe_lipschitz < 0.51);
    }

    #[test]
    fn refinement_changes_value_less_than_margin() {
        let sys = make_pendulum();
        let s = suite(None);
        let base = cfg();
        let b1 = Barrier::new(&sys, &s, &PendulumSafeSet, base).unwrap();
        let b2 = Barrier::new(&sys, &s, &PendulumSafeSet, BarrierConfig { flow: base.flow.refined(2), ..base }).unwrap();
        let margin = b1
            .epsilon_s_estimate(&Vector::<2>::from(STATE_BOX_LOWER), &Vector::<2>::from(STATE_BOX_UPPER), 41)
            .epsilon_s;
        for x in random_states(20, 12) {
            let d = (b1.h_value(&x).unwrap().h - b2.h_value(&x).unwrap().h).abs();
            assert!(d < margin, "{x:?}: {d} ≥ {margin}");
        }
    }

    #[test]
    fn exact_counterpart_signs() {
        let sys = make_pendulum();
        let s = suite(Some(13));
        let b = Barrier::new(&sys, &s, &PendulumSafeSet, cfg()).unwrap();
        let fine = cfg().flow.refined(10);
        assert!(b.h_star_exact(&Vector::<2>::zeros(), &fine).unwrap() >= 0.0);
        assert!(b.h_star_exact(&Vector::<2>::new(std::f64::consts::PI, 0.0), &fine).unwrap() < 0.0);
    }

    #[test]
    fn permutation_of_designed_backups_keeps_h() {
        let sys = make_pendulum();
        let sets = crate::backup::pendulum_backup_sets();
        let make = |order: [usize; 2]| {
            let designed = order
                .iter()
                .map(|&j| {
                    let set = sets[j].clone();
                    let policy = crate::backup::SaturatedLinearPolicy::new(Matrix::<1, 2>::new(-15.0, -15.0), *set.center(), sys.control_box()).unwrap();
                    crate::backup::DesignedBackup { set: Box::new(set) as Box<dyn ScalarField<2>>, policy: Box::new(policy) as Box<dyn crate::dynamics::Policy<2, 1>> }
                })
                .collect();
            BackupSuite::new(designed, None).unwrap()
        };
        let (a, bsuite) = (make([0, 1]), make([1, 0]));
        let ba = Barrier::new(&sys, &a, &PendulumSafeSet, cfg()).unwrap();
        let bb = Barrier::new(&sys, &bsuite, &PendulumSafeSet, cfg()).unwrap();
        for x in random_states(10, 14) {
            let (ha, hb) = (ba.h_value(&x).unwrap().h, bb.h_value(&x).unwrap().h);
            assert!((ha - hb).abs() < 1e-12);
        }
    }
}

//! Soft actor-critic at toy scale: a squashed-Gaussian actor, twin critics with
//! Polyak-averaged targets and an optionally tuned entropy coefficient. All
//! gradients come from the reverse pass of [`Mlp`].
//!
//! The actor network maps a state to `2M` numbers: `M` means followed by `M`
//! unconstrained log-std parameters. Its first `M` outputs are exactly what a
//! deterministic [`rlbus_core::backup::MlpPolicy`] reads, so the same weights
//! serve as the executed neural backup policy.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rlbus_core::dynamics::{AdmissibleBox, Vector};
use rlbus_core::nn::{Activation, Adam, BatchTrace, Mlp};

use crate::buffer::{ReplayBuffer, Transition};
use crate::{Result, RlError};

/// Range the log standard deviation is smoothly squashed into.
pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 1.0;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EntropyCoef {
    Fixed(f64),
    /// Tuned towards a target entropy of `-M`, starting from `initial`.
    Auto { initial: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SacConfig {
    pub actor_hidden: Vec<usize>,
    pub critic_hidden: Vec<usize>,
    pub actor_activation: Activation,
    pub critic_activation: Activation,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub alpha_lr: f64,
    /// Polyak coefficient of the target critics.
    pub tau: f64,
    pub entropy: EntropyCoef,
    pub batch_size: usize,
    pub updates_per_call: usize,
    pub seed: u64,
}

impl Default for SacConfig {
    fn default() -> Self {
        Self {
            actor_hidden: vec![64, 64],
            critic_hidden: vec![64, 64],
            actor_activation: Activation::Tanh,
            critic_activation: Activation::Silu,
            actor_lr: 3e-4,
            critic_lr: 3e-4,
            alpha_lr: 3e-4,
            tau: 0.005,
            entropy: EntropyCoef::Auto { initial: 0.2 },
            batch_size: 256,
            updates_per_call: 200,
            seed: 0,
        }
    }
}

impl SacConfig {
    /// Zero learning rates are allowed; they freeze the corresponding weights.
    pub fn validate(&self) -> Result<()> {
        let rates = [("actor_lr", self.actor_lr), ("critic_lr", self.critic_lr), ("alpha_lr", self.alpha_lr)];
        for (name, v) in rates {
            if !(v.is_finite() && v >= 0.0) {
                return Err(RlError::Config(format!("{name} must be finite and non-negative, got {v}")));
            }
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(RlError::Config(format!("tau must lie in [0, 1], got {}", self.tau)));
        }
        if self.batch_size == 0 {
            return Err(RlError::Config("batch_size must be positive".into()));
        }
        let alpha = match self.entropy {
            EntropyCoef::Fixed(a) => a,
            EntropyCoef::Auto { initial } => initial,
        };
        if !(alpha.is_finite() && alpha >= 0.0) || matches!(self.entropy, EntropyCoef::Auto { initial } if initial <= 0.0)
        {
            return Err(RlError::Config(format!("invalid entropy coefficient {:?}", self.entropy)));
        }
        Ok(())
    }
}

/// Losses of one update round.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SacDiagnostics {
    pub critic_loss: f64,
    pub actor_loss: f64,
    pub alpha: f64,
    /// `-E[log π]` over the actor batch.
    pub entropy: f64,
}

/// Column-major batch of transitions.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub x: DMatrix<f64>,
    pub u: DMatrix<f64>,
    pub r: Vec<f64>,
    pub x_next: DMatrix<f64>,
}

impl Batch {
    pub fn from_transitions<const N: usize, const M: usize>(ts: &[Transition<N, M>]) -> Self {
        let b = ts.len();
        Self {
            x: DMatrix::from_fn(N, b, |i, c| ts[c].x[i]),
            u: DMatrix::from_fn(M, b, |i, c| ts[c].u[i]),
            r: ts.iter().map(|t| t.r).collect(),
            x_next: DMatrix::from_fn(N, b, |i, c| ts[c].x_next[i]),
        }
    }

    pub fn len(&self) -> usize {
        self.r.len()
    }

    pub fn is_empty(&self) -> bool {
        self.r.is_empty()
    }
}

/// Reparameterised actor samples for a batch.
struct ActorSample {
    trace: BatchTrace,
    /// `M × B` squashed actions in `[-1, 1]`.
    a: DMatrix<f64>,
    /// `M × B` log standard deviations.
    log_std: DMatrix<f64>,
    /// `M × B` actions scaled into the control box.
    u: DMatrix<f64>,
    log_prob: Vec<f64>,
}

fn softplus(y: f64) -> f64 {
    y.max(0.0) + (-y.abs()).exp().ln_1p()
}

fn squash_log_std(raw: f64) -> f64 {
    LOG_STD_MIN + 0.5 * (LOG_STD_MAX - LOG_STD_MIN) * (raw.tanh() + 1.0)
}

fn stack(top: &DMatrix<f64>, bottom: &DMatrix<f64>) -> DMatrix<f64> {
    let (n, m) = (top.nrows(), bottom.nrows());
    DMatrix::from_fn(n + m, top.ncols(), |i, c| if i < n { top[(i, c)] } else { bottom[(i - n, c)] })
}

fn polyak(target: &mut Mlp, source: &Mlp, tau: f64) -> Result<()> {
    let src = source.params();
    let mut dst = target.params();
    // Written as an increment so identical weights stay bit-identical.
    for (d, s) in dst.iter_mut().zip(&src) {
        *d += tau * (s - *d);
    }
    target.set_params(&dst)?;
    Ok(())
}

fn adam_step(net: &mut Mlp, opt: &mut Adam, grad: &[f64]) -> Result<()> {
    if opt.lr == 0.0 {
        return Ok(());
    }
    let mut p = net.params();
    opt.step(&mut p, grad);
    net.set_params(&p)?;
    Ok(())
}

#[derive(Debug, Clone)]
pub struct SacAgent<const N: usize, const M: usize> {
    cfg: SacConfig,
    discount: f64,
    actor: Mlp,
    critics: [Mlp; 2],
    targets: [Mlp; 2],
    log_alpha: f64,
    actor_opt: Adam,
    critic_opts: [Adam; 2],
    alpha_opt: Adam,
    offset: Vector<M>,
    scale: Vector<M>,
    rng: ChaCha8Rng,
    updates: usize,
}

impl<const N: usize, const M: usize> SacAgent<N, M> {
    /// Fresh agent with randomly initialised networks drawn from `cfg.seed`.
    pub fn new(cfg: SacConfig, discount: f64, control_box: &AdmissibleBox<M>) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let widths: Vec<usize> = std::iter::once(N).chain(cfg.actor_hidden.iter().copied()).chain([2 * M]).collect();
        let actor = Mlp::new(&widths, cfg.actor_activation, &mut rng)?;
        Self::build(cfg, discount, control_box, actor, rng)
    }

    /// Agent whose actor starts from the given network (`N → 2M`).
    pub fn with_actor(cfg: SacConfig, discount: f64, control_box: &AdmissibleBox<M>, actor: Mlp) -> Result<Self> {
        let rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        Self::build(cfg, discount, control_box, actor, rng)
    }

    fn build(cfg: SacConfig, discount: f64, control_box: &AdmissibleBox<M>, actor: Mlp, mut rng: ChaCha8Rng) -> Result<Self> {
        cfg.validate()?;
        if !(discount > 0.0 && discount < 1.0) {
            return Err(RlError::Config(format!("discount must lie in (0, 1), got {discount}")));
        }
        if actor.input_dim() != N || actor.output_dim() != 2 * M {
            return Err(RlError::Config(format!(
                "actor maps {} -> {}, need {N} -> {}",
                actor.input_dim(),
                actor.output_dim(),
                2 * M
            )));
        }
        let widths: Vec<usize> = std::iter::once(N + M).chain(cfg.critic_hidden.iter().copied()).chain([1]).collect();
        let critics = [
            Mlp::new(&widths, cfg.critic_activation, &mut rng)?,
            Mlp::new(&widths, cfg.critic_activation, &mut rng)?,
        ];
        let targets = critics.clone();
        let log_alpha = match cfg.entropy {
            EntropyCoef::Fixed(a) => a.ln(),
            EntropyCoef::Auto { initial } => initial.ln(),
        };
        Ok(Self {
            actor_opt: Adam::new(actor.param_count(), cfg.actor_lr),
            critic_opts: [
                Adam::new(critics[0].param_count(), cfg.critic_lr),
                Adam::new(critics[1].param_count(), cfg.critic_lr),
            ],
            alpha_opt: Adam::new(1, cfg.alpha_lr),
            offset: control_box.midpoint(),
            scale: control_box.half_width(),
            actor,
            critics,
            targets,
            log_alpha,
            discount,
            cfg,
            rng,
            updates: 0,
        })
    }

    pub fn config(&self) -> &SacConfig {
        &self.cfg
    }

    pub fn actor(&self) -> &Mlp {
        &self.actor
    }

    pub fn critics(&self) -> &[Mlp; 2] {
        &self.critics
    }

    pub fn targets(&self) -> &[Mlp; 2] {
        &self.targets
    }

    pub fn alpha(&self) -> f64 {
        self.log_alpha.exp()
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    /// Number of completed update rounds.
    pub fn updates(&self) -> usize {
        self.updates
    }

    fn target_entropy(&self) -> f64 {
        -(M as f64)
    }

    /// Deterministic action `mid + half ⊙ tanh(mean)`.
    pub fn act_mean(&self, x: &Vector<N>) -> Vector<M> {
        let out = self.actor.forward(x.as_slice());
        Vector::<M>::from_fn(|k, _| self.offset[k] + self.scale[k] * out[k].tanh())
    }

    /// Exploratory action drawn from the squashed Gaussian.
    pub fn act(&mut self, x: &Vector<N>) -> Vector<M> {
        let out = self.actor.forward(x.as_slice());
        Vector::<M>::from_fn(|k, _| {
            let e: f64 = self.rng.sample(StandardNormal);
            let z = out[k] + squash_log_std(out[M + k]).exp() * e;
            self.offset[k] + self.scale[k] * z.tanh()
        })
    }

    /// Both critic values at one state-action pair.
    pub fn critic_values(&self, x: &Vector<N>, u: &Vector<M>) -> [f64; 2] {
        let input: Vec<f64> = x.iter().chain(u.iter()).copied().collect();
        [self.critics[0].forward(&input)[0], self.critics[1].forward(&input)[0]]
    }

    fn sample_actions(&self, x: &DMatrix<f64>, eps: &DMatrix<f64>) -> ActorSample {
        let trace = self.actor.forward_batch(x);
        let b = x.ncols();
        let mut a = DMatrix::zeros(M, b);
        let mut log_std = DMatrix::zeros(M, b);
        let mut u = DMatrix::zeros(M, b);
        let mut log_prob = vec![0.0; b];
        for c in 0..b {
            for k in 0..M {
                let ls = squash_log_std(trace.output[(M + k, c)]);
                let e = eps[(k, c)];
                let z = trace.output[(k, c)] + ls.exp() * e;
                let t = z.tanh();
                a[(k, c)] = t;
                log_std[(k, c)] = ls;
                u[(k, c)] = self.offset[k] + self.scale[k] * t;
                // ln(1 - tanh²z) = 2 (ln 2 - z - softplus(-2z)), stable for large |z|.
                let log_jac = self.scale[k].ln() + 2.0 * (std::f64::consts::LN_2 - z - softplus(-2.0 * z));
                log_prob[c] += -0.5 * e * e - HALF_LN_2PI - ls - log_jac;
            }
        }
        ActorSample { trace, a, log_std, u, log_prob }
    }

    fn draw_noise(&mut self, b: usize) -> DMatrix<f64> {
        DMatrix::from_fn(M, b, |_, _| self.rng.sample(StandardNormal))
    }

    /// Sum of both critics' mean squared Bellman errors (halved), with its
    /// gradient for each critic. `eps_next` (`M × B`) drives the next-state
    /// action samples.
    pub fn critic_loss_and_grad(&self, batch: &Batch, eps_next: &DMatrix<f64>) -> (f64, [Vec<f64>; 2]) {
        let b = batch.len() as f64;
        let next = self.sample_actions(&batch.x_next, eps_next);
        let next_in = stack(&batch.x_next, &next.u);
        let t0 = self.targets[0].forward_batch(&next_in).output;
        let t1 = self.targets[1].forward_batch(&next_in).output;
        let alpha = self.alpha();
        let y: Vec<f64> = (0..batch.len())
            .map(|c| batch.r[c] + self.discount * (t0[(0, c)].min(t1[(0, c)]) - alpha * next.log_prob[c]))
            .collect();
        let input = stack(&batch.x, &batch.u);
        let mut loss = 0.0;
        let grads = [0, 1].map(|i| {
            let trace = self.critics[i].forward_batch(&input);
            let d = DMatrix::from_fn(1, batch.len(), |_, c| (trace.output[(0, c)] - y[c]) / b);
            loss += (0..batch.len()).map(|c| 0.5 * (trace.output[(0, c)] - y[c]).powi(2)).sum::<f64>() / b;
            self.critics[i].backward_batch(&trace, &d).0
        });
        (loss, grads)
    }

    /// Mean of `α log π(u|x) − min_i Q_i(x, u)` over reparameterised samples,
    /// its actor gradient and the mean log-probability.
    pub fn actor_loss_and_grad(&self, x: &DMatrix<f64>, eps: &DMatrix<f64>) -> (f64, Vec<f64>, f64) {
        let bsz = x.ncols();
        let b = bsz as f64;
        let s = self.sample_actions(x, eps);
        let input = stack(x, &s.u);
        let traces = [self.critics[0].forward_batch(&input), self.critics[1].forward_batch(&input)];
        let pick: Vec<usize> =
            (0..bsz).map(|c| usize::from(traces[1].output[(0, c)] < traces[0].output[(0, c)])).collect();
        // ∂min Q/∂u through whichever critic attains the minimum.
        let mut dq_du = DMatrix::<f64>::zeros(M, bsz);
        for i in 0..2 {
            let seed = DMatrix::from_fn(1, bsz, |_, c| if pick[c] == i { 1.0 } else { 0.0 });
            let (_, d_in) = self.critics[i].backward_batch(&traces[i], &seed);
            for c in 0..bsz {
                for k in 0..M {
                    dq_du[(k, c)] += d_in[(N + k, c)];
                }
            }
        }
        let alpha = self.alpha();
        let mut loss = 0.0;
        let mut d_out = DMatrix::<f64>::zeros(2 * M, bsz);
        for c in 0..bsz {
            loss += (alpha * s.log_prob[c] - traces[pick[c]].output[(0, c)]) / b;
            for k in 0..M {
                let a = s.a[(k, c)];
                let sd = s.log_std[(k, c)].exp();
                let e = eps[(k, c)];
                let du_dz = self.scale[k] * (1.0 - a * a);
                // ∂ log π/∂z = 2 tanh z with the noise held fixed.
                let d_mean = alpha * 2.0 * a - dq_du[(k, c)] * du_dz;
                let d_log_std = alpha * (-1.0 + 2.0 * a * sd * e) - dq_du[(k, c)] * du_dz * sd * e;
                let raw = s.trace.output[(M + k, c)].tanh();
                d_out[(k, c)] = d_mean / b;
                d_out[(M + k, c)] = d_log_std * 0.5 * (LOG_STD_MAX - LOG_STD_MIN) * (1.0 - raw * raw) / b;
            }
        }
        let (grad, _) = self.actor.backward_batch(&s.trace, &d_out);
        (loss, grad, s.log_prob.iter().sum::<f64>() / b)
    }

    /// `-log α · (E[log π] + H_target)` and its derivative in `log α`.
    pub fn alpha_loss_and_grad(&self, mean_log_prob: f64) -> (f64, f64) {
        let g = -(mean_log_prob + self.target_entropy());
        (self.log_alpha * g, g)
    }

    /// One round: critics, then the actor against the updated critics, then
    /// the entropy coefficient, then the targets.
    pub fn update(&mut self, buffer: &ReplayBuffer<N, M>) -> Result<SacDiagnostics> {
        let idx = buffer.sample_indices(self.cfg.batch_size, &mut self.rng)?;
        let ts: Vec<Transition<N, M>> = idx.iter().map(|&i| *buffer.get(i).expect("sampled index in range")).collect();
        let batch = Batch::from_transitions(&ts);
        let eps_next = self.draw_noise(batch.len());
        let eps = self.draw_noise(batch.len());

        let (critic_loss, critic_grads) = self.critic_loss_and_grad(&batch, &eps_next);
        for (i, g) in critic_grads.iter().enumerate() {
            adam_step(&mut self.critics[i], &mut self.critic_opts[i], g)?;
        }
        let (actor_loss, actor_grad, mean_log_prob) = self.actor_loss_and_grad(&batch.x, &eps);
        adam_step(&mut self.actor, &mut self.actor_opt, &actor_grad)?;
        if let EntropyCoef::Auto { .. } = self.cfg.entropy {
            let (_, g) = self.alpha_loss_and_grad(mean_log_prob);
            let mut p = [self.log_alpha];
            self.alpha_opt.step(&mut p, &[g]);
            self.log_alpha = p[0];
        }
        for i in 0..2 {
            polyak(&mut self.targets[i], &self.critics[i], self.cfg.tau)?;
        }
        self.updates += 1;
        let diag = SacDiagnostics { critic_loss, actor_loss, alpha: self.alpha(), entropy: -mean_log_prob };
        if !(critic_loss.is_finite() && actor_loss.is_finite() && diag.alpha.is_finite() && self.actor.all_finite()) {
            return Err(RlError::Diverged(format!("after {} updates: {diag:?}", self.updates)));
        }
        Ok(diag)
    }

    /// `updates_per_call` rounds, or none while the buffer is smaller than a
    /// batch. Returns the diagnostics of the last round.
    pub fn train(&mut self, buffer: &ReplayBuffer<N, M>) -> Result<Option<SacDiagnostics>> {
        if buffer.len() < self.cfg.batch_size {
            return Ok(None);
        }
        let mut last = None;
        for _ in 0..self.cfg.updates_per_call {
            last = Some(self.update(buffer)?);
        }
        Ok(last)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn agent(entropy: EntropyCoef) -> SacAgent<2, 1> {
        let cfg = SacConfig {
            actor_hidden: vec![6],
            critic_hidden: vec![7],
            entropy,
            batch_size: 8,
            seed: 11,
            ..Default::default()
        };
        SacAgent::new(cfg, 0.9, &AdmissibleBox::symmetric(1.5).unwrap()).unwrap()
    }

    fn batch(seed: u64) -> Batch {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ts: Vec<Transition<2, 1>> = (0..8)
            .map(|_| Transition {
                x: Vector::<2>::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)),
                u: Vector::<1>::new(rng.random_range(-1.5..1.5)),
                r: rng.random_range(-1.0..1.0),
                x_next: Vector::<2>::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)),
            })
            .collect();
        Batch::from_transitions(&ts)
    }

    fn noise(seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(1, 8, |_, _| rng.sample::<f64, _>(StandardNormal))
    }

    fn perturbed(net: &Mlp, k: usize, d: f64) -> Mlp {
        let mut p = net.params();
        p[k] += d;
        let mut out = net.clone();
        out.set_params(&p).unwrap();
        out
    }

    fn assert_close(fd: f64, g: f64) {
        assert!((fd - g).abs() <= 1e-3 * fd.abs().max(1e-3), "fd {fd} vs analytic {g}");
    }

    #[test]
    fn critic_gradient_matches_finite_differences() {
        let a = agent(EntropyCoef::Fixed(0.3));
        let (b, e) = (batch(1), noise(2));
        let (_, grads) = a.critic_loss_and_grad(&b, &e);
        let h = 1e-6;
        for i in 0..2 {
            for k in [0, a.critics[i].param_count() - 1] {
                let mut plus = a.clone();
                plus.critics[i] = perturbed(&a.critics[i], k, h);
                let mut minus = a.clone();
                minus.critics[i] = perturbed(&a.critics[i], k, -h);
                let fd = (plus.critic_loss_and_grad(&b, &e).0 - minus.critic_loss_and_grad(&b, &e).0) / (2.0 * h);
                assert_close(fd, grads[i][k]);
            }
        }
    }

    #[test]
    fn actor_gradient_matches_finite_differences() {
        let a = agent(EntropyCoef::Fixed(0.3));
        let (b, e) = (batch(3), noise(4));
        let (_, g, _) = a.actor_loss_and_grad(&b.x, &e);
        let h = 1e-6;
        // First weight feeds the mean head; the last bias is the log-std head.
        for k in [0, 3, a.actor.param_count() - 1] {
            let mut plus = a.clone();
            plus.actor = perturbed(&a.actor, k, h);
            let mut minus = a.clone();
            minus.actor = perturbed(&a.actor, k, -h);
            let fd = (plus.actor_loss_and_grad(&b.x, &e).0 - minus.actor_loss_and_grad(&b.x, &e).0) / (2.0 * h);
            assert_close(fd, g[k]);
        }
    }

    #[test]
    fn alpha_gradient_matches_finite_differences() {
        let mut a = agent(EntropyCoef::Auto { initial: 0.5 });
        let (_, g) = a.alpha_loss_and_grad(-0.7);
        let h = 1e-6;
        a.log_alpha += h;
        let up = a.alpha_loss_and_grad(-0.7).0;
        a.log_alpha -= 2.0 * h;
        let down = a.alpha_loss_and_grad(-0.7).0;
        assert_close((up - down) / (2.0 * h), g);
    }

    #[test]
    fn log_prob_matches_direct_density() {
        let a = agent(EntropyCoef::Fixed(0.1));
        let x = DMatrix::from_column_slice(2, 1, &[0.3, -0.4]);
        let e = DMatrix::from_column_slice(1, 1, &[0.8]);
        let s = a.sample_actions(&x, &e);
        let out = a.actor.forward(&[0.3, -0.4]);
        let (mu, sd) = (out[0], squash_log_std(out[1]).exp());
        let z = mu + sd * 0.8;
        let gauss = (-(0.5 * 0.8f64 * 0.8)).exp() / (sd * (2.0 * std::f64::consts::PI).sqrt());
        let density = gauss / (1.5 * (1.0 - z.tanh().powi(2)));
        assert!((s.log_prob[0] - density.ln()).abs() < 1e-12);
    }

    #[test]
    fn zero_learning_rates_freeze_everything() {
        let cfg = SacConfig {
            actor_hidden: vec![8],
            critic_hidden: vec![8],
            actor_lr: 0.0,
            critic_lr: 0.0,
            alpha_lr: 0.0,
            batch_size: 16,
            ..Default::default()
        };
        let mut a: SacAgent<2, 1> = SacAgent::new(cfg, 0.99, &AdmissibleBox::symmetric(1.5).unwrap()).unwrap();
        let mut buf = ReplayBuffer::new(100).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..64 {
            buf.push(Transition {
                x: Vector::<2>::new(rng.random(), rng.random()),
                u: Vector::<1>::new(rng.random_range(-1.5..1.5)),
                r: rng.random(),
                x_next: Vector::<2>::new(rng.random(), rng.random()),
            })
            .unwrap();
        }
        let before = (a.actor.params(), a.critics.clone(), a.targets.clone(), a.log_alpha);
        for _ in 0..5 {
            a.update(&buf).unwrap();
        }
        assert_eq!(before.0, a.actor.params());
        assert_eq!(before.1, a.critics);
        assert_eq!(before.2, a.targets);
        assert_eq!(before.3.to_bits(), a.log_alpha.to_bits());
    }

    #[test]
    fn rejects_bad_configs() {
        let bx = AdmissibleBox::symmetric(1.0).unwrap();
        let bad = |cfg: SacConfig, d: f64| SacAgent::<2, 1>::new(cfg, d, &bx).is_err();
        assert!(bad(SacConfig::default(), 1.0));
        assert!(bad(SacConfig { tau: 2.0, ..Default::default() }, 0.9));
        assert!(bad(SacConfig { batch_size: 0, ..Default::default() }, 0.9));
        assert!(bad(SacConfig { actor_lr: -1.0, ..Default::default() }, 0.9));
        assert!(bad(SacConfig { entropy: EntropyCoef::Auto { initial: 0.0 }, ..Default::default() }, 0.9));
    }
}

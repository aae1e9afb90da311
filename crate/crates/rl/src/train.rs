//! Episode loop: a desired policy proposes controls, the shield (if any)
//! filters them, the executed step is recorded, and every backup flow the
//! shield computed becomes training data for the neural backup policy.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rlbus_core::backup::BackupSuite;
use rlbus_core::barrier::{Barrier, BarrierConfig};
use rlbus_core::dynamics::{advance, ConstantPolicy, DynamicsError, Policy, ScalarField, SystemModel, Vector};
use rlbus_core::shield::{shield_control, ShieldState};

use crate::buffer::{ReplayBuffer, Transition};
use crate::rewards::assign_backup_rewards;
use crate::sac::{SacAgent, SacConfig, SacDiagnostics};
use crate::{Result, RlError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Scenario {
    /// Desired policy executed as is.
    Unshielded,
    /// Shield with the designed backups only.
    DesignedShield,
    /// Shield with the designed backups and a neural backup trained alongside.
    NeuralShield,
}

impl Scenario {
    pub fn shielded(self) -> bool {
        self != Scenario::Unshielded
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MdpConfig {
    /// Zero-order-hold interval.
    pub dt: f64,
    /// RK4 steps per hold interval.
    pub substeps: usize,
    /// Steps per episode.
    pub horizon_steps: usize,
    pub discount: f64,
    pub buffer_capacity: usize,
    /// Train after every `train_every` episodes.
    pub train_every: usize,
}

impl Default for MdpConfig {
    fn default() -> Self {
        Self { dt: 0.01, substeps: 1, horizon_steps: 200, discount: 0.99, buffer_capacity: 1_000_000, train_every: 1 }
    }
}

impl MdpConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(RlError::Config(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.discount > 0.0 && self.discount < 1.0) {
            return Err(RlError::Config(format!("discount must lie in (0, 1), got {}", self.discount)));
        }
        if self.substeps == 0 || self.horizon_steps == 0 || self.train_every == 0 || self.buffer_capacity == 0 {
            return Err(RlError::Config("substeps, horizon_steps, train_every and buffer_capacity must be positive".into()));
        }
        Ok(())
    }
}

/// Regular grid used to measure set areas (volumes for `N > 2`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AreaGrid<const N: usize> {
    pub lower: Vector<N>,
    pub upper: Vector<N>,
    pub per_dim: usize,
}

impl<const N: usize> AreaGrid<N> {
    pub fn points(&self) -> impl Iterator<Item = Vector<N>> + '_ {
        let n = self.per_dim.max(2);
        let total = n.pow(N as u32);
        (0..total).map(move |mut idx| {
            Vector::<N>::from_fn(|d, _| {
                let i = idx % n;
                idx /= n;
                self.lower[d] + (self.upper[d] - self.lower[d]) * i as f64 / (n - 1) as f64
            })
        })
    }

    pub fn cell_volume(&self) -> f64 {
        let n = self.per_dim.max(2);
        (0..N).map(|d| (self.upper[d] - self.lower[d]) / (n - 1) as f64).product()
    }

    /// Cell volume times the number of nodes where `inside` holds.
    pub fn measure(&self, mut inside: impl FnMut(&Vector<N>) -> Result<bool>) -> Result<f64> {
        let mut count = 0usize;
        for x in self.points() {
            if inside(&x)? {
                count += 1;
            }
        }
        Ok(count as f64 * self.cell_volume())
    }
}

/// Everything the loop needs to know about the task.
pub struct Environment<'a, S, const N: usize, const M: usize> {
    pub sys: &'a S,
    pub safe: &'a dyn ScalarField<N>,
    pub reward: &'a dyn Fn(&Vector<N>, &Vector<M>) -> f64,
    /// Box from which initial states are drawn (then restricted to the certified set).
    pub init_lower: Vector<N>,
    pub init_upper: Vector<N>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig<const N: usize> {
    pub scenario: Scenario,
    pub episodes: usize,
    pub mdp: MdpConfig,
    pub barrier: BarrierConfig,
    /// Agent for the desired (performance) policy.
    pub desired: SacConfig,
    /// Agent for the neural backup policy.
    pub backup: SacConfig,
    /// Completed-episode counts at which the neural backup set is measured;
    /// `0` means before any training.
    pub snapshot_episodes: Vec<usize>,
    pub area_grid: AreaGrid<N>,
    /// Seed of the initial-state sampler.
    pub seed: u64,
    /// Rejection-sampling budget for one initial state.
    pub max_init_attempts: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRecord {
    /// 1-based.
    pub episode: usize,
    /// Undiscounted sum of performance rewards.
    pub ret: f64,
    /// Steps that ended with the safe-set function negative.
    pub violations: usize,
    pub steps: usize,
    pub min_safe_value: f64,
    pub wall_time_s: f64,
    /// Area of the neural backup's certified set after this episode, when a
    /// snapshot was due.
    pub h3_area: Option<f64>,
    /// Steps at which the shield reassigned its backup index.
    pub switches: usize,
    /// Integration failure that ended the episode early.
    pub incident: Option<String>,
    pub desired_diag: Option<SacDiagnostics>,
    pub backup_diag: Option<SacDiagnostics>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Snapshot {
    pub episode: usize,
    pub area: f64,
}

/// Result of a training run.
pub struct TrainOutcome<const N: usize, const M: usize> {
    pub records: Vec<EpisodeRecord>,
    pub snapshots: Vec<Snapshot>,
    pub suite: BackupSuite<N, M>,
    pub desired: Option<SacAgent<N, M>>,
    pub backup: Option<SacAgent<N, M>>,
    pub backup_transitions: usize,
}

enum Desired<'p, const N: usize, const M: usize> {
    Agent(Box<SacAgent<N, M>>),
    Fixed(&'p dyn Policy<N, M>),
}

impl<const N: usize, const M: usize> Desired<'_, N, M> {
    fn act(&mut self, x: &Vector<N>) -> Vector<M> {
        match self {
            Desired::Agent(a) => a.act(x),
            Desired::Fixed(p) => p.control(x),
        }
    }
}

/// Hooks called while training; used to export artifacts.
pub trait TrainObserver<const N: usize, const M: usize> {
    /// Called at every snapshot episode with the suite as it stands.
    fn on_snapshot(&mut self, _episode: usize, _suite: &BackupSuite<N, M>, _area: f64) -> Result<()> {
        Ok(())
    }

    fn on_episode(&mut self, _record: &EpisodeRecord) -> Result<()> {
        Ok(())
    }
}

/// Observer that does nothing.
pub struct NoObserver;

impl<const N: usize, const M: usize> TrainObserver<N, M> for NoObserver {}

/// Area of `{h_j ≥ 0}` for the neural backup index over the grid.
pub fn neural_set_area<S: SystemModel<N, M>, const N: usize, const M: usize>(
    env: &Environment<'_, S, N, M>,
    suite: &BackupSuite<N, M>,
    barrier: &BarrierConfig,
    grid: &AreaGrid<N>,
) -> Result<Option<f64>> {
    if suite.neural().is_none() {
        return Ok(None);
    }
    let b = Barrier::new(env.sys, suite, env.safe, *barrier)?;
    let j = suite.len() - 1;
    grid.measure(|x| Ok(b.h_j_value(j, x)?.0 >= 0.0)).map(Some)
}

/// Uniform draw from `{h ≥ ε}` inside the initial box.
pub fn sample_certified<S: SystemModel<N, M>, R: Rng + ?Sized, const N: usize, const M: usize>(
    barrier: &Barrier<'_, S, N, M>,
    lower: &Vector<N>,
    upper: &Vector<N>,
    max_attempts: usize,
    rng: &mut R,
) -> Result<Vector<N>> {
    let eps = barrier.config().epsilon;
    for _ in 0..max_attempts {
        let x = Vector::<N>::from_fn(|i, _| rng.random_range(lower[i]..=upper[i]));
        if barrier.h_value(&x)?.h >= eps {
            return Ok(x);
        }
    }
    Err(RlError::Config(format!("no certified state found in {max_attempts} draws")))
}

/// Trains the desired policy with SAC on the performance reward under the
/// configured scenario; in [`Scenario::NeuralShield`] the neural backup is
/// trained concurrently from the shield's backup flows.
pub fn train_performance_agent<S: SystemModel<N, M>, const N: usize, const M: usize>(
    env: &Environment<'_, S, N, M>,
    suite: BackupSuite<N, M>,
    cfg: &TrainConfig<N>,
    observer: &mut dyn TrainObserver<N, M>,
) -> Result<TrainOutcome<N, M>> {
    let agent = SacAgent::new(cfg.desired.clone(), cfg.mdp.discount, env.sys.control_box())?;
    run(env, suite, cfg, Desired::Agent(Box::new(agent)), observer)
}

/// Trains only the neural backup while a fixed desired policy explores under
/// the shield.
pub fn rlbus_train<S: SystemModel<N, M>, const N: usize, const M: usize>(
    env: &Environment<'_, S, N, M>,
    suite: BackupSuite<N, M>,
    cfg: &TrainConfig<N>,
    desired: &dyn Policy<N, M>,
    observer: &mut dyn TrainObserver<N, M>,
) -> Result<TrainOutcome<N, M>> {
    if cfg.scenario != Scenario::NeuralShield {
        return Err(RlError::Config("backup training needs the neural-shield scenario".into()));
    }
    run(env, suite, cfg, Desired::Fixed(desired), observer)
}

fn run<S: SystemModel<N, M>, const N: usize, const M: usize>(
    env: &Environment<'_, S, N, M>,
    mut suite: BackupSuite<N, M>,
    cfg: &TrainConfig<N>,
    mut desired: Desired<'_, N, M>,
    observer: &mut dyn TrainObserver<N, M>,
) -> Result<TrainOutcome<N, M>> {
    cfg.mdp.validate()?;
    cfg.barrier.validate()?;
    let neural = suite.neural().is_some();
    match (cfg.scenario, neural) {
        (Scenario::NeuralShield, false) => {
            return Err(RlError::Config("the neural-shield scenario needs a neural backup in the suite".into()))
        }
        (Scenario::Unshielded | Scenario::DesignedShield, true) => {
            return Err(RlError::Config("this scenario runs with designed backups only".into()))
        }
        _ => {}
    }
    let mut backup = if cfg.scenario == Scenario::NeuralShield {
        let net = suite.neural().expect("checked above").policy.net().clone();
        Some(SacAgent::with_actor(cfg.backup.clone(), cfg.mdp.discount, env.sys.control_box(), net)?)
    } else {
        None
    };
    let mut desired_buf = ReplayBuffer::<N, M>::new(cfg.mdp.buffer_capacity)?;
    let mut backup_buf = ReplayBuffer::<N, M>::new(cfg.mdp.buffer_capacity)?;
    let mut init_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut records = Vec::with_capacity(cfg.episodes);
    let mut snapshots = Vec::new();
    let mut backup_transitions = 0usize;

    let snapshot = |k: usize, suite: &BackupSuite<N, M>, observer: &mut dyn TrainObserver<N, M>| -> Result<Option<f64>> {
        if !cfg.snapshot_episodes.contains(&k) {
            return Ok(None);
        }
        let area = neural_set_area(env, suite, &cfg.barrier, &cfg.area_grid)?;
        if let Some(a) = area {
            observer.on_snapshot(k, suite, a)?;
        }
        Ok(area)
    };
    if let Some(area) = snapshot(0, &suite, observer)? {
        snapshots.push(Snapshot { episode: 0, area });
    }

    for episode in 1..=cfg.episodes {
        let started = Instant::now();
        let barrier = Barrier::new(env.sys, &suite, env.safe, cfg.barrier)?;
        let mut x = sample_certified(&barrier, &env.init_lower, &env.init_upper, cfg.max_init_attempts, &mut init_rng)?;
        let mut state = ShieldState::new();
        let (mut ret, mut violations, mut steps, mut switches) = (0.0, 0usize, 0usize, 0usize);
        let mut min_safe_value = env.safe.value(&x);
        let mut incident = None;
        for _ in 0..cfg.mdp.horizon_steps {
            let u_d = desired.act(&x);
            let u = if cfg.scenario.shielded() {
                let out = match shield_control(&barrier, &u_d, &x, state) {
                    Ok(out) => out,
                    Err(e) if is_divergence(&e) => {
                        incident = Some(e.to_string());
                        break;
                    }
                    Err(e) => return Err(e.into()),
                };
                state = out.state;
                switches += usize::from(out.switched);
                if backup.is_some() {
                    let ts = assign_backup_rewards(env.sys, &suite, &out.eval, &cfg.barrier.flow)?;
                    backup_transitions += ts.len();
                    backup_buf.extend(ts)?;
                }
                out.u
            } else {
                u_d
            };
            let x_next = match advance(env.sys, &ConstantPolicy(u), &x, cfg.mdp.dt, cfg.mdp.substeps) {
                Ok(y) => y,
                Err(e) => {
                    incident = Some(e.to_string());
                    break;
                }
            };
            let r = (env.reward)(&x, &u);
            ret += r;
            steps += 1;
            let hs = env.safe.value(&x_next);
            min_safe_value = min_safe_value.min(hs);
            violations += usize::from(hs < 0.0);
            desired_buf.push(Transition { x, u, r, x_next })?;
            x = x_next;
        }
        drop(barrier);

        let (mut desired_diag, mut backup_diag) = (None, None);
        if episode % cfg.mdp.train_every == 0 {
            if let Desired::Agent(agent) = &mut desired {
                desired_diag = agent.train(&desired_buf)?;
            }
            if let Some(agent) = &mut backup {
                backup_diag = agent.train(&backup_buf)?;
                let params = agent.actor().params();
                suite.neural_mut().expect("neural scenario").policy.set_params(&params)?;
            }
        }
        let h3_area = snapshot(episode, &suite, observer)?;
        if let Some(area) = h3_area {
            snapshots.push(Snapshot { episode, area });
        }
        let record = EpisodeRecord {
            episode,
            ret,
            violations,
            steps,
            min_safe_value,
            wall_time_s: started.elapsed().as_secs_f64(),
            h3_area,
            switches,
            incident,
            desired_diag,
            backup_diag,
        };
        observer.on_episode(&record)?;
        records.push(record);
    }
    let desired = match desired {
        Desired::Agent(a) => Some(*a),
        Desired::Fixed(_) => None,
    };
    Ok(TrainOutcome { records, snapshots, suite, desired, backup, backup_transitions })
}

fn is_divergence(e: &rlbus_core::shield::ShieldError) -> bool {
    use rlbus_core::barrier::BarrierError;
    use rlbus_core::shield::ShieldError;
    matches!(e, ShieldError::Barrier(BarrierError::Dynamics(DynamicsError::Diverged { .. })))
}

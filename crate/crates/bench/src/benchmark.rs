//! Pendulum benchmark assembly from a [`RunConfig`].

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rlbus_core::backup::{make_pendulum_suite, BackupSuite, HomotopyXi, MlpPolicy, NeuralBackup, ScreeningConfig};
use rlbus_core::barrier::{Barrier, BarrierConfig, SamplingMargin};
use rlbus_core::dynamics::{make_pendulum, Pendulum, ScalarField, SystemModel, Vector};
use rlbus_core::nn::Mlp;
use rlbus_core::pendulum::{performance_reward, PendulumSafeSet, STATE_BOX_LOWER, STATE_BOX_UPPER};
use rlbus_hj::{scalar_control_samples, solve_value_grid, GridSpec, SolveReport, ValueGrid};
use rlbus_rl::train::{AreaGrid, Environment, TrainConfig};

use crate::config::{RunConfig, ScenarioId};
use crate::Result;

/// Independent random streams derived from one run seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    InitialStates = 0,
    DesiredAgent = 1,
    BackupAgent = 2,
    NeuralInit = 3,
}

pub fn derive_seed(seed: u64, stream: Stream) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).rotate_left(17) ^ (stream as u64).wrapping_mul(0xD1B5_4A32_D192_ED03)
}

fn reward(x: &Vector<2>, u: &Vector<1>) -> f64 {
    performance_reward(x, u[0])
}

pub fn state_box() -> (Vector<2>, Vector<2>) {
    (Vector::<2>::from(STATE_BOX_LOWER), Vector::<2>::from(STATE_BOX_UPPER))
}

/// Configured pendulum benchmark with its resolved `ε`.
#[derive(Debug, Clone)]
pub struct Benchmark {
    pub cfg: RunConfig,
    pub sys: Pendulum,
    pub margin: SamplingMargin,
    pub epsilon: f64,
}

impl Benchmark {
    pub fn new(cfg: RunConfig) -> Result<Self> {
        cfg.validate()?;
        let sys = make_pendulum();
        // The speed bound covers every control in the box, so any neural
        // weights give the same margin.
        let probe = make_pendulum_suite(
            &sys,
            cfg.backup.gain,
            Some(Self::random_neural(&cfg, &sys, 0)?),
            &ScreeningConfig { rollouts: 0, ..Default::default() },
        )?;
        let (lo, hi) = state_box();
        let margin = Barrier::new(&sys, &probe, &PendulumSafeSet, cfg.barrier_config(0.0)?)?.epsilon_s_estimate(
            &lo,
            &hi,
            cfg.barrier.margin_grid,
        );
        let epsilon = cfg.barrier.epsilon.unwrap_or(margin.epsilon_s);
        Ok(Self { cfg, sys, margin, epsilon })
    }

    fn random_neural(cfg: &RunConfig, sys: &Pendulum, seed: u64) -> Result<NeuralBackup<2, 1>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let policy = MlpPolicy::random(&cfg.backup.hidden, 2, cfg.backup.activation, sys.control_box(), &mut rng)?;
        Ok(NeuralBackup { policy, xi: HomotopyXi::new(cfg.backup.blend_width)?, rho: cfg.backup.rho })
    }

    pub fn safe_set(&self) -> &'static PendulumSafeSet {
        &PendulumSafeSet
    }

    pub fn screening(&self) -> ScreeningConfig {
        ScreeningConfig {
            rollouts: self.cfg.backup.screening_rollouts,
            duration: self.cfg.backup.screening_duration,
            ..Default::default()
        }
    }

    /// Untrained neural backup drawn from the run seed.
    pub fn initial_neural(&self) -> Result<NeuralBackup<2, 1>> {
        Self::random_neural(&self.cfg, &self.sys, derive_seed(self.cfg.seed, Stream::NeuralInit))
    }

    /// Neural backup with the given actor network (`2 → 2`).
    pub fn neural_from_net(&self, net: Mlp) -> Result<NeuralBackup<2, 1>> {
        Ok(NeuralBackup {
            policy: MlpPolicy::new(net, self.sys.control_box())?,
            xi: HomotopyXi::new(self.cfg.backup.blend_width)?,
            rho: self.cfg.backup.rho,
        })
    }

    /// Screened designed backups plus an optional neural backup.
    pub fn suite(&self, neural: Option<NeuralBackup<2, 1>>) -> Result<BackupSuite<2, 1>> {
        Ok(make_pendulum_suite(&self.sys, self.cfg.backup.gain, neural, &self.screening())?)
    }

    /// The suite a scenario starts from.
    pub fn initial_suite(&self) -> Result<BackupSuite<2, 1>> {
        let neural = match self.cfg.scenario {
            ScenarioId::SacRlbus => Some(self.initial_neural()?),
            _ => None,
        };
        self.suite(neural)
    }

    pub fn barrier_config(&self) -> BarrierConfig {
        self.cfg.barrier_config(self.epsilon).expect("validated at construction")
    }

    pub fn barrier<'a>(&'a self, suite: &'a BackupSuite<2, 1>) -> Result<Barrier<'a, Pendulum, 2, 1>> {
        Ok(Barrier::new(&self.sys, suite, &PendulumSafeSet, self.barrier_config())?)
    }

    pub fn environment(&self) -> Environment<'_, Pendulum, 2, 1> {
        let (init_lower, init_upper) = state_box();
        Environment { sys: &self.sys, safe: &PendulumSafeSet, reward: &reward, init_lower, init_upper }
    }

    pub fn area_grid(&self) -> AreaGrid<2> {
        let (lower, upper) = state_box();
        AreaGrid { lower, upper, per_dim: self.cfg.snapshots.per_dim }
    }

    pub fn train_config(&self) -> TrainConfig<2> {
        TrainConfig {
            scenario: self.cfg.scenario.scenario(),
            episodes: self.cfg.episodes,
            mdp: self.cfg.mdp_config(),
            barrier: self.barrier_config(),
            desired: self.cfg.desired_sac.to_config(derive_seed(self.cfg.seed, Stream::DesiredAgent)),
            backup: self.cfg.backup_sac.to_config(derive_seed(self.cfg.seed, Stream::BackupAgent)),
            snapshot_episodes: self.cfg.snapshots.episodes.clone(),
            area_grid: self.area_grid(),
            seed: derive_seed(self.cfg.seed, Stream::InitialStates),
            max_init_attempts: 1_000_000,
        }
    }

    pub fn hj_spec(&self) -> GridSpec {
        let (lo, hi) = state_box();
        GridSpec {
            lower: [lo[0], lo[1]],
            upper: [hi[0], hi[1]],
            points: [self.cfg.hj.points; 2],
            dt: self.cfg.hj.dt,
            horizon: self.cfg.hj.horizon,
            boundary_margin: self.cfg.hj.boundary_margin,
        }
    }

    /// Reach-avoid oracle over the designed backup sets.
    pub fn solve_hj(&self) -> Result<(ValueGrid, SolveReport)> {
        let sets = rlbus_core::backup::pendulum_backup_sets();
        let refs: Vec<&dyn ScalarField<2>> = sets.iter().map(|s| s as &dyn ScalarField<2>).collect();
        let b = self.sys.control_box();
        let controls = scalar_control_samples(b.lower()[0], b.upper()[0], self.cfg.hj.controls);
        Ok(solve_value_grid(&self.sys, &PendulumSafeSet, &refs, &self.hj_spec(), &controls)?)
    }
}

//! Run configuration: one TOML file with a section per module. Every field has
//! a default, so an empty file describes the reference benchmark.

use std::path::Path;

use rlbus_core::barrier::{BarrierConfig, GradientMethod, SoftParams};
use rlbus_core::dynamics::FlowConfig;
use rlbus_core::nn::Activation;
use rlbus_rl::sac::{EntropyCoef, SacConfig};
use rlbus_rl::train::{MdpConfig, Scenario};
use serde::{Deserialize, Serialize};

use crate::{BenchError, Result};

/// The three benchmark scenarios.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioId {
    /// Performance agent alone.
    Sac,
    /// Shield with the designed backups.
    SacBcbf,
    /// Shield with designed and learned backups.
    SacRlbus,
}

impl ScenarioId {
    pub fn scenario(self) -> Scenario {
        match self {
            ScenarioId::Sac => Scenario::Unshielded,
            ScenarioId::SacBcbf => Scenario::DesignedShield,
            ScenarioId::SacRlbus => Scenario::NeuralShield,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ScenarioId::Sac => "sac",
            ScenarioId::SacBcbf => "sac_bcbf",
            ScenarioId::SacRlbus => "sac_rlbus",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradientChoice {
    Forward,
    Adjoint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowSection {
    pub horizon: f64,
    pub samples: usize,
    pub substeps: usize,
}

impl Default for FlowSection {
    fn default() -> Self {
        Self { horizon: 2.0, samples: 200, substeps: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BarrierSection {
    pub rho_min: f64,
    pub rho_max: f64,
    pub alpha: f64,
    pub kappa_h: f64,
    pub kappa_beta: f64,
    /// Defaults to the estimated sampling margin when absent.
    pub epsilon: Option<f64>,
    pub gradient: GradientChoice,
    /// Grid nodes per axis for the sampling-margin estimate.
    pub margin_grid: usize,
}

impl Default for BarrierSection {
    fn default() -> Self {
        Self {
            rho_min: 1000.0,
            rho_max: 1000.0,
            alpha: 5.0,
            kappa_h: 0.005,
            kappa_beta: 0.05,
            epsilon: None,
            gradient: GradientChoice::Adjoint,
            margin_grid: 201,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackupSection {
    pub gain: [f64; 2],
    pub blend_width: f64,
    /// Sharpness of the soft maximum that defines the learned backup set.
    pub rho: f64,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub screening_rollouts: usize,
    pub screening_duration: f64,
}

impl Default for BackupSection {
    fn default() -> Self {
        Self {
            gain: rlbus_core::backup::PENDULUM_GAIN,
            blend_width: rlbus_core::backup::PENDULUM_BLEND_WIDTH,
            rho: 1000.0,
            hidden: vec![32, 32],
            activation: Activation::Tanh,
            screening_rollouts: 1000,
            screening_duration: 10.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MdpSection {
    pub dt: f64,
    pub substeps: usize,
    pub horizon_steps: usize,
    pub discount: f64,
    pub buffer_capacity: usize,
    pub train_every: usize,
}

impl Default for MdpSection {
    fn default() -> Self {
        let d = MdpConfig::default();
        Self {
            dt: d.dt,
            substeps: d.substeps,
            horizon_steps: d.horizon_steps,
            discount: d.discount,
            buffer_capacity: d.buffer_capacity,
            train_every: d.train_every,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SacSection {
    pub actor_hidden: Vec<usize>,
    pub critic_hidden: Vec<usize>,
    pub actor_activation: Activation,
    pub critic_activation: Activation,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub alpha_lr: f64,
    pub tau: f64,
    /// Fixed entropy coefficient; tuned automatically when absent.
    pub alpha: Option<f64>,
    pub initial_alpha: f64,
    pub batch_size: usize,
    pub updates_per_call: usize,
}

impl Default for SacSection {
    fn default() -> Self {
        Self {
            actor_hidden: vec![32, 32],
            critic_hidden: vec![32, 32],
            actor_activation: Activation::Tanh,
            critic_activation: Activation::Silu,
            actor_lr: 1e-3,
            critic_lr: 1e-3,
            alpha_lr: 1e-3,
            tau: 0.01,
            alpha: None,
            initial_alpha: 0.1,
            batch_size: 64,
            updates_per_call: 200,
        }
    }
}

impl SacSection {
    pub fn to_config(&self, seed: u64) -> SacConfig {
        SacConfig {
            actor_hidden: self.actor_hidden.clone(),
            critic_hidden: self.critic_hidden.clone(),
            actor_activation: self.actor_activation,
            critic_activation: self.critic_activation,
            actor_lr: self.actor_lr,
            critic_lr: self.critic_lr,
            alpha_lr: self.alpha_lr,
            tau: self.tau,
            entropy: match self.alpha {
                Some(a) => EntropyCoef::Fixed(a),
                None => EntropyCoef::Auto { initial: self.initial_alpha },
            },
            batch_size: self.batch_size,
            updates_per_call: self.updates_per_call,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SnapshotSection {
    /// Completed-episode counts at which sets are measured and exported.
    pub episodes: Vec<usize>,
    /// Grid nodes per axis for areas and exports.
    pub per_dim: usize,
    /// Write the full set grid CSV at each snapshot.
    pub export: bool,
}

impl Default for SnapshotSection {
    fn default() -> Self {
        Self { episodes: vec![0, 100], per_dim: 61, export: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HjSection {
    pub points: usize,
    pub dt: f64,
    pub horizon: f64,
    pub controls: usize,
    pub boundary_margin: f64,
}

impl Default for HjSection {
    fn default() -> Self {
        let g = rlbus_hj::GridSpec::new([0.0; 2], [1.0; 2], 201);
        Self { points: 201, dt: g.dt, horizon: g.horizon, controls: 21, boundary_margin: g.boundary_margin }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub scenario: ScenarioId,
    pub seed: u64,
    pub episodes: usize,
    /// Single-threaded, reproducible execution. Every code path is serial
    /// today, so this is recorded rather than acted on.
    pub deterministic: bool,
    pub flow: FlowSection,
    pub barrier: BarrierSection,
    pub backup: BackupSection,
    pub mdp: MdpSection,
    pub desired_sac: SacSection,
    pub backup_sac: SacSection,
    pub snapshots: SnapshotSection,
    pub hj: HjSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            scenario: ScenarioId::SacRlbus,
            seed: 0,
            episodes: 100,
            deterministic: true,
            flow: FlowSection::default(),
            barrier: BarrierSection::default(),
            backup: BackupSection::default(),
            mdp: MdpSection::default(),
            desired_sac: SacSection::default(),
            backup_sac: SacSection { batch_size: 128, ..SacSection::default() },
            snapshots: SnapshotSection::default(),
            hj: HjSection::default(),
        }
    }
}

fn field_err(field: &str, msg: impl std::fmt::Display) -> BenchError {
    BenchError::Config(format!("{field}: {msg}"))
}

fn positive(field: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(field_err(field, format!("must be positive, got {v}")))
    }
}

fn nonzero(field: &str, v: usize) -> Result<()> {
    if v > 0 {
        Ok(())
    } else {
        Err(field_err(field, "must be at least 1"))
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| BenchError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| field_err(&path.display().to_string(), e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    /// Field-level checks beyond what the types enforce.
    pub fn validate(&self) -> Result<()> {
        positive("flow.horizon", self.flow.horizon)?;
        nonzero("flow.samples", self.flow.samples)?;
        nonzero("flow.substeps", self.flow.substeps)?;
        positive("barrier.rho_min", self.barrier.rho_min)?;
        positive("barrier.rho_max", self.barrier.rho_max)?;
        positive("barrier.alpha", self.barrier.alpha)?;
        positive("barrier.kappa_h", self.barrier.kappa_h)?;
        positive("barrier.kappa_beta", self.barrier.kappa_beta)?;
        if let Some(e) = self.barrier.epsilon {
            if !(e.is_finite() && e >= 0.0) {
                return Err(field_err("barrier.epsilon", format!("must be non-negative, got {e}")));
            }
        }
        if self.barrier.margin_grid < 2 {
            return Err(field_err("barrier.margin_grid", "needs at least 2 nodes"));
        }
        positive("backup.blend_width", self.backup.blend_width)?;
        positive("backup.rho", self.backup.rho)?;
        positive("backup.screening_duration", self.backup.screening_duration)?;
        if self.backup.hidden.is_empty() || self.backup.hidden.contains(&0) {
            return Err(field_err("backup.hidden", "needs at least one non-empty hidden layer"));
        }
        positive("mdp.dt", self.mdp.dt)?;
        nonzero("mdp.substeps", self.mdp.substeps)?;
        nonzero("mdp.horizon_steps", self.mdp.horizon_steps)?;
        nonzero("mdp.train_every", self.mdp.train_every)?;
        nonzero("mdp.buffer_capacity", self.mdp.buffer_capacity)?;
        if !(self.mdp.discount > 0.0 && self.mdp.discount < 1.0) {
            return Err(field_err("mdp.discount", format!("must lie in (0, 1), got {}", self.mdp.discount)));
        }
        for (name, s) in [("desired_sac", &self.desired_sac), ("backup_sac", &self.backup_sac)] {
            s.to_config(0).validate().map_err(|e| field_err(name, e))?;
        }
        if self.backup_sac.actor_hidden != self.backup.hidden || self.backup_sac.actor_activation != self.backup.activation {
            return Err(field_err(
                "backup_sac.actor_hidden",
                "must match backup.hidden and backup.activation; the trained actor is the executed policy",
            ));
        }
        if self.snapshots.per_dim < 2 {
            return Err(field_err("snapshots.per_dim", "needs at least 2 nodes"));
        }
        if self.hj.points < 3 {
            return Err(field_err("hj.points", "needs at least 3 nodes"));
        }
        positive("hj.dt", self.hj.dt)?;
        nonzero("hj.controls", self.hj.controls)?;
        if !(self.hj.horizon >= 0.0) {
            return Err(field_err("hj.horizon", "must be non-negative"));
        }
        Ok(())
    }

    pub fn flow_config(&self) -> Result<FlowConfig> {
        FlowConfig::new(self.flow.horizon, self.flow.samples, self.flow.substeps).map_err(|e| field_err("flow", e))
    }

    /// Barrier settings with the given `ε`.
    pub fn barrier_config(&self, epsilon: f64) -> Result<BarrierConfig> {
        Ok(BarrierConfig {
            flow: self.flow_config()?,
            soft: SoftParams { rho_min: self.barrier.rho_min, rho_max: self.barrier.rho_max },
            epsilon,
            alpha: self.barrier.alpha,
            kappa_h: self.barrier.kappa_h,
            kappa_beta: self.barrier.kappa_beta,
            gradient: match self.barrier.gradient {
                GradientChoice::Forward => GradientMethod::Forward,
                GradientChoice::Adjoint => GradientMethod::Adjoint,
            },
        })
    }

    pub fn mdp_config(&self) -> MdpConfig {
        MdpConfig {
            dt: self.mdp.dt,
            substeps: self.mdp.substeps,
            horizon_steps: self.mdp.horizon_steps,
            discount: self.mdp.discount,
            buffer_capacity: self.mdp.buffer_capacity,
            train_every: self.mdp.train_every,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_the_reference_benchmark() {
        assert_eq!(RunConfig::from_toml_str("").unwrap(), RunConfig::default());
    }

    #[test]
    fn round_trips_through_toml() {
        let mut cfg = RunConfig { scenario: ScenarioId::SacBcbf, seed: 9, ..Default::default() };
        cfg.barrier.epsilon = Some(0.01);
        assert_eq!(RunConfig::from_toml_str(&cfg.to_toml_string()).unwrap(), cfg);
    }

    #[test]
    fn errors_name_the_field() {
        let e = RunConfig::from_toml_str("[barrier]\nkappa_h = -1.0\n").unwrap_err().to_string();
        assert!(e.contains("barrier.kappa_h"), "{e}");
        let e = RunConfig::from_toml_str("[mdp]\ndiscount = 1.0\n").unwrap_err().to_string();
        assert!(e.contains("mdp.discount"), "{e}");
        let e = RunConfig::from_toml_str("[flow]\nsamples = 0\n").unwrap_err().to_string();
        assert!(e.contains("flow.samples"), "{e}");
        assert!(RunConfig::from_toml_str("[flow]\nbogus = 1\n").is_err());
        assert!(RunConfig::from_toml_str("scenario = \"other\"\n").is_err());
    }
}

//! Reinforcement-learning side of the stack: transitions and replay, a
//! small soft actor-critic, per-backup reward assignment and the training
//! loop that grows the certified set while a shielded agent explores.

pub mod buffer;
pub mod rewards;
pub mod sac;
pub mod train;

use rlbus_core::backup::BackupError;
use rlbus_core::barrier::BarrierError;
use rlbus_core::dynamics::DynamicsError;
use rlbus_core::nn::NnError;
use rlbus_core::shield::ShieldError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RlError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("training diverged: {0}")]
    Diverged(String),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Backup(#[from] BackupError),
    #[error(transparent)]
    Barrier(#[from] BarrierError),
    #[error(transparent)]
    Shield(#[from] ShieldError),
    #[error(transparent)]
    Nn(#[from] NnError),
    /// Failure inside a [`train::TrainObserver`] hook.
    #[error("observer failed: {0}")]
    Observer(#[source] Box<dyn std::error::Error + Send + Sync>),
}

pub type Result<T> = std::result::Result<T, RlError>;

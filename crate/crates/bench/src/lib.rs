//! The inverted-pendulum benchmark: constants, scenario runner, set exports,
//! the property suite behind `rlbus verify`, and the pieces of the CLI.

pub mod artifacts;
pub mod benchmark;
pub mod config;
pub mod export;
pub mod scenario;
pub mod verify;

use rlbus_core::backup::BackupError;
use rlbus_core::barrier::BarrierError;
use rlbus_core::dynamics::DynamicsError;
use rlbus_core::nn::NnError;
use rlbus_core::shield::ShieldError;
use rlbus_hj::HjError;
use rlbus_rl::RlError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("safety property violated: {0}")]
    SafetyViolation(String),
    #[error("input error: {0}")]
    Input(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Rl(#[from] RlError),
    #[error(transparent)]
    Hj(#[from] HjError),
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
}

pub type Result<T> = std::result::Result<T, BenchError>;

fn is_divergence(e: &DynamicsError) -> bool {
    matches!(e, DynamicsError::Diverged { .. })
}

impl BenchError {
    /// Process exit code: 2 configuration, 3 safety violation, 4 numerical
    /// divergence, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            BenchError::Config(_) => 2,
            BenchError::SafetyViolation(_) => 3,
            BenchError::Rl(RlError::Config(_)) | BenchError::Backup(BackupError::Config(_)) => 2,
            BenchError::Barrier(BarrierError::Config(_)) | BenchError::Hj(HjError::Config(_)) => 2,
            BenchError::Rl(RlError::Diverged(_)) => 4,
            BenchError::Dynamics(e)
            | BenchError::Rl(RlError::Dynamics(e))
            | BenchError::Backup(BackupError::Dynamics(e))
            | BenchError::Barrier(BarrierError::Dynamics(e))
            | BenchError::Hj(HjError::Dynamics(e))
            | BenchError::Rl(RlError::Barrier(BarrierError::Dynamics(e)))
            | BenchError::Shield(ShieldError::Barrier(BarrierError::Dynamics(e)))
            | BenchError::Rl(RlError::Shield(ShieldError::Barrier(BarrierError::Dynamics(e))))
                if is_divergence(e) =>
            {
                4
            }
            _ => 1,
        }
    }
}

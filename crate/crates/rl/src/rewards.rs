//! Turns the backup flows computed by one shield query into training data for
//! the neural backup policy. Every transition taken from the flow of backup
//! `j` carries the same reward `h_j(x)`.

use rlbus_core::backup::BackupSuite;
use rlbus_core::barrier::BarrierEvaluation;
use rlbus_core::dynamics::{advance, FlowConfig, Policy, SystemModel};

use crate::buffer::Transition;
use crate::{Result, RlError};

/// Transitions `(x_i, u_bj(x_i), h_j, x_{i+1})` for samples `i = 1..=N` of every
/// backup flow in `eval`; the successor of the last sample comes from one more
/// sample interval under the same backup. Yields `len(suite) · N` transitions.
pub fn assign_backup_rewards<S, const N: usize, const M: usize>(
    sys: &S,
    suite: &BackupSuite<N, M>,
    eval: &BarrierEvaluation<N, M>,
    flow: &FlowConfig,
) -> Result<Vec<Transition<N, M>>>
where
    S: SystemModel<N, M>,
{
    if eval.bundle.len() != suite.len() || eval.h_j.len() != suite.len() {
        return Err(RlError::Config(format!(
            "evaluation holds {} flows for a suite of {}",
            eval.bundle.len(),
            suite.len()
        )));
    }
    let mut out = Vec::with_capacity(suite.len() * flow.samples);
    for (j, samples) in eval.bundle.iter().enumerate() {
        if samples.len() != flow.samples + 1 {
            return Err(RlError::Config(format!("flow {j} has {} samples, expected {}", samples.len(), flow.samples + 1)));
        }
        let policy = suite.policy(j);
        let r = eval.h_j[j];
        for i in 1..=flow.samples {
            let x = samples[i];
            let x_next = if i < flow.samples {
                samples[i + 1]
            } else {
                advance(sys, &policy, &x, flow.sample_spacing(), flow.substeps)?
            };
            out.push(Transition { x, u: policy.control(&x), r, x_next });
        }
    }
    Ok(out)
}

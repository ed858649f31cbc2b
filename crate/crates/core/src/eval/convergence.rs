use super::EvalError;
use crate::net::TrajectoryRecord;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepNorms {
    /// `‖δ(t)‖₂` over all entries.
    pub delta_l2: f64,
    /// `‖h(t+1) − h(t)‖∞`.
    pub state_change_inf: f64,
}

/// Exact per-step norms from stored tensors.
pub fn convergence_profile(record: &TrajectoryRecord) -> Result<Vec<StepNorms>, EvalError> {
    if record.timesteps() < 2 {
        return Err(EvalError::Validation(format!(
            "convergence profile needs T ≥ 2, trajectory has {}",
            record.timesteps()
        )));
    }
    Ok(record
        .deltas
        .iter()
        .enumerate()
        .map(|(t, d)| StepNorms {
            delta_l2: d.norm_l2(),
            state_change_inf: record.states[t + 1].sub(&record.states[t]).max_abs(),
        })
        .collect())
}

//! Partition of a trajectory into nominal, pre-intervention, intervention and
//! post-intervention regions.

use crate::error::{CoreError, Result};
use crate::types::{SegmentLabel, Trajectory};

/// Default pre-intervention window, in steps.
pub const DEFAULT_WINDOW: usize = 15;

/// First step of the pre-intervention window for a stop at `stop`.
pub fn window_start(stop: usize, k: usize) -> usize {
    stop.saturating_sub(k)
}

/// Labels every step of `traj` for window length `k`.
///
/// Steps in `[max(0, T-k), T)` are pre-intervention, earlier steps nominal,
/// the intervention span `[T, T+I)` intervention and everything after it
/// post-intervention. A trajectory that was never stopped is all nominal.
pub fn segment_trajectory(traj: &Trajectory, k: usize) -> Result<Vec<SegmentLabel>> {
    if k == 0 {
        return Err(CoreError::Parameter("window length must be positive".into()));
    }
    let h = traj.steps.len();
    let Some(stop) = traj.stop_index else {
        if traj.intervention_span.is_some() {
            return Err(CoreError::Invariant("intervention span without a stop index".into()));
        }
        return Ok(vec![SegmentLabel::Nominal; h]);
    };
    if stop > h {
        return Err(CoreError::Invariant(format!("stop index {stop} beyond horizon {h}")));
    }
    let intervention_end = match traj.intervention_span {
        Some(span) => {
            if span.start != stop {
                return Err(CoreError::Invariant(format!(
                    "intervention starts at {} but the stop is at {stop}",
                    span.start
                )));
            }
            if span.end < span.start || span.end > h {
                return Err(CoreError::Invariant(format!(
                    "intervention span [{}, {}) outside [0, {h}]",
                    span.start, span.end
                )));
            }
            span.end
        }
        None => stop,
    };
    let pre = window_start(stop, k);
    Ok((0..h)
        .map(|t| {
            if t < pre {
                SegmentLabel::Nominal
            } else if t < stop {
                SegmentLabel::PreIntervention
            } else if t < intervention_end {
                SegmentLabel::Intervention
            } else {
                SegmentLabel::PostIntervention
            }
        })
        .collect())
}

//! Turns a stopped trajectory plus critic verdicts into a training
//! trajectory whose pre-intervention actions are replaced.

use serde::{Deserialize, Serialize};

use crate::critic::{critique, Critic, CriticQuery, CriticVerdict, ProposalConfig};
use crate::env::Env;
use crate::error::{CoreError, Result};
use crate::segment::{window_start, DEFAULT_WINDOW};
use crate::types::{Action, Actor, Provenance, Trajectory};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RelabelMode {
    /// One critic verdict at the stop, applied to the whole window.
    Basic,
    /// One critic verdict per window step, at that step's observation.
    Full,
}

impl RelabelMode {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Basic => "basic",
            Self::Full => "full",
        }
    }
}

impl std::str::FromStr for RelabelMode {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "basic" => Ok(Self::Basic),
            "full" => Ok(Self::Full),
            other => Err(CoreError::Parameter(format!("unknown relabel mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RelabelConfig {
    pub mode: RelabelMode,
    /// Pre-intervention window length.
    pub window: usize,
    pub proposal: ProposalConfig,
    /// Keep intervention and post-intervention steps after the window.
    pub include_intervention: bool,
    /// Show the correction to the critic (off for the no-feedback ablation).
    pub include_feedback: bool,
    /// In full mode, reuse the first step's gripper verdict instead of
    /// asking again at every step.
    pub pin_gripper: bool,
}

impl Default for RelabelConfig {
    fn default() -> Self {
        Self {
            mode: RelabelMode::Basic,
            window: DEFAULT_WINDOW,
            proposal: ProposalConfig::default(),
            include_intervention: false,
            include_feedback: true,
            pin_gripper: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RelabelOutcome {
    pub trajectory: Trajectory,
    pub verdicts: Vec<CriticVerdict>,
    pub selection_queries: usize,
    pub gripper_queries: usize,
}

/// Prefix `[0, T)` of a stopped trajectory; unchanged if never stopped.
/// Intervention and post-intervention steps are dropped.
pub fn strip_to_verbal_only(traj: &Trajectory) -> Trajectory {
    let Some(stop) = traj.stop_index else {
        return traj.clone();
    };
    let mut out = traj.clone();
    out.steps.truncate(stop);
    out.final_obs = traj.observation_at(stop).cloned();
    out.intervention_span = None;
    out.labels = crate::segment::segment_trajectory(&out, traj.window.max(1)).unwrap_or_default();
    out
}

/// Relabels with one verdict at `o_T` applied to the whole window.
pub fn relabel_basic(traj: &Trajectory, env: &Env, critic: &dyn Critic, cfg: &RelabelConfig) -> Result<RelabelOutcome> {
    relabel(traj, env, critic, &RelabelConfig { mode: RelabelMode::Basic, ..*cfg })
}

/// Relabels with one verdict per window step.
pub fn relabel_full(traj: &Trajectory, env: &Env, critic: &dyn Critic, cfg: &RelabelConfig) -> Result<RelabelOutcome> {
    relabel(traj, env, critic, &RelabelConfig { mode: RelabelMode::Full, ..*cfg })
}

/// Relabels the pre-intervention window `[max(0, T-k), T)` of `traj`.
///
/// Observations are never touched; relabeled steps keep their executed
/// action in `original_action`. Any critic failure fails the whole
/// trajectory.
pub fn relabel(traj: &Trajectory, env: &Env, critic: &dyn Critic, cfg: &RelabelConfig) -> Result<RelabelOutcome> {
    if cfg.window == 0 {
        return Err(CoreError::Parameter("relabel window must be positive".into()));
    }
    let stop = traj.stop_index.ok_or_else(|| CoreError::Relabel("trajectory was never stopped".into()))?;
    let correction =
        traj.correction.as_ref().ok_or_else(|| CoreError::Relabel("stopped trajectory has no correction".into()))?;
    if stop > traj.horizon() {
        return Err(CoreError::Invariant(format!("stop index {stop} beyond horizon {}", traj.horizon())));
    }
    let mut out = if cfg.include_intervention { traj.clone() } else { strip_to_verbal_only(traj) };
    let start = window_start(stop, cfg.window);
    let mut verdicts = Vec::new();
    let mut gripper_queries = 0;

    let query_at = |t: usize, original: Action, pinned| -> Result<CriticVerdict> {
        let obs = traj
            .observation_at(t)
            .ok_or_else(|| CoreError::Relabel(format!("no observation at step {t}")))?;
        let q = CriticQuery { env, obs, correction, include_feedback: cfg.include_feedback, original_action: original };
        critique(critic, &q, &cfg.proposal, pinned)
    };

    if start < stop {
        match cfg.mode {
            RelabelMode::Basic => {
                let at_stop = traj
                    .stop_action
                    .or_else(|| traj.steps.get(stop).map(|s| s.executed_action()))
                    .unwrap_or_else(|| traj.steps[stop - 1].executed_action());
                let v = query_at(stop, at_stop, None)?;
                gripper_queries += usize::from(v.gripper_queried);
                for step in &mut out.steps[start..stop] {
                    let original = step.executed_action();
                    step.action = v.resolve_for(&original)?;
                    step.original_action = Some(original);
                    step.actor = Actor::Relabeled;
                }
                verdicts.push(v);
            }
            RelabelMode::Full => {
                let mut pinned = None;
                for t in start..stop {
                    let original = traj.steps[t].executed_action();
                    let v = query_at(t, original, pinned)?;
                    gripper_queries += usize::from(v.gripper_queried);
                    if cfg.pin_gripper && pinned.is_none() && v.gripper_queried {
                        pinned = Some(v.grip);
                    }
                    let step = &mut out.steps[t];
                    step.action = v.action;
                    step.original_action = Some(original);
                    step.actor = Actor::Relabeled;
                    verdicts.push(v);
                }
            }
        }
    }
    out.relabel_segments(cfg.window)?;
    let selection_queries = verdicts.len();
    out.provenance = Some(Provenance {
        method: cfg.proposal.method.as_str().to_string(),
        mode: cfg.mode.as_str().to_string(),
        backend: critic.id(),
        selection_queries,
        gripper_queries,
        transcript_ref: format!("{}/{}", traj.task, traj.seed),
    });
    out.validate()?;
    Ok(RelabelOutcome { trajectory: out, verdicts, selection_queries, gripper_queries })
}

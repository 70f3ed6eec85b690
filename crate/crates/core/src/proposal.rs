//! Candidate actions shown to the critic and resolution of its verdict into
//! the final relabeled action.

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::types::{validate_action, Action, GRIP_CLOSED, GRIP_OPEN};

pub const DEFAULT_MAGNITUDE: i32 = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProposalMethod {
    /// The chosen one-dimensional candidate is the final action.
    Onedim,
    /// The chosen candidate is a delta added to the policy's own action.
    OnedimPlusOriginal,
    /// The critic writes a full action from scratch.
    LlmGives,
    /// The critic edits the policy's action.
    LlmEdits,
}

impl ProposalMethod {
    pub fn is_onedim(self) -> bool {
        matches!(self, Self::Onedim | Self::OnedimPlusOriginal)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Onedim => "onedim",
            Self::OnedimPlusOriginal => "onedim_plus_original",
            Self::LlmGives => "llm_gives",
            Self::LlmEdits => "llm_edits",
        }
    }
}

impl std::str::FromStr for ProposalMethod {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "onedim" => Ok(Self::Onedim),
            "onedim_plus_original" => Ok(Self::OnedimPlusOriginal),
            "llm_gives" => Ok(Self::LlmGives),
            "llm_edits" => Ok(Self::LlmEdits),
            other => Err(CoreError::Parameter(format!("unknown proposal method {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateSet {
    pub method: ProposalMethod,
    pub magnitude: i32,
    /// Gripper command resolved before proposing; carried by every candidate.
    pub grip: i32,
    pub candidates: Vec<Action>,
    pub original_action: Action,
}

/// Axes of the one-dimensional candidates: x, y, z, yaw, optionally
/// followed by roll and pitch.
fn candidate_axes(include_roll_pitch: bool) -> &'static [usize] {
    if include_roll_pitch {
        &[0, 1, 2, 5, 3, 4]
    } else {
        &[0, 1, 2, 5]
    }
}

/// Builds the candidate set. One-dimensional methods list `+m` on each axis
/// then `-m` on each axis, every candidate carrying `grip`.
pub fn propose(method: ProposalMethod, original_action: Action, grip: i32, magnitude: i32) -> Result<CandidateSet> {
    propose_with(method, original_action, grip, magnitude, false)
}

/// As [`propose`], optionally extending the one-dimensional set with roll
/// and pitch (12 candidates).
pub fn propose_with(
    method: ProposalMethod,
    original_action: Action,
    grip: i32,
    magnitude: i32,
    include_roll_pitch: bool,
) -> Result<CandidateSet> {
    if !(1..=100).contains(&magnitude) {
        return Err(CoreError::Parameter(format!("candidate magnitude {magnitude} outside (0, 100]")));
    }
    if grip != GRIP_OPEN && grip != GRIP_CLOSED {
        return Err(CoreError::Parameter(format!("grip {grip} must be ±100")));
    }
    validate_action(&original_action)
        .map_err(|v| CoreError::Parameter(format!("original action {original_action}: {v}")))?;
    let candidates = match method {
        ProposalMethod::Onedim | ProposalMethod::OnedimPlusOriginal => {
            let axes = candidate_axes(include_roll_pitch);
            [magnitude, -magnitude]
                .iter()
                .flat_map(|&m| {
                    axes.iter().map(move |&axis| {
                        let mut a = Action::hold(grip);
                        a.motion[axis] = m;
                        a
                    })
                })
                .collect()
        }
        ProposalMethod::LlmGives => Vec::new(),
        ProposalMethod::LlmEdits => vec![original_action],
    };
    Ok(CandidateSet { method, magnitude, grip, candidates, original_action })
}

/// What the critic returned for a query.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Choice {
    Index(usize),
    Action([i32; 7]),
}

/// Turns a verdict into the action that will be trained on.
///
/// `original` is the policy's action at the step being relabeled and
/// `grip` the resolved gripper command.
pub fn resolve_final_action(set: &CandidateSet, original: &Action, choice: &Choice, grip: i32) -> Result<Action> {
    let resolved = match (set.method, choice) {
        (ProposalMethod::Onedim, Choice::Index(i)) => {
            let c = set.candidates.get(*i).ok_or_else(|| out_of_range(*i, set))?;
            Action { grip, ..*c }
        }
        (ProposalMethod::OnedimPlusOriginal, Choice::Index(i)) => {
            let c = set.candidates.get(*i).ok_or_else(|| out_of_range(*i, set))?;
            original.offset_clamped(c, grip)
        }
        (ProposalMethod::LlmGives | ProposalMethod::LlmEdits, Choice::Action(a)) => Action::from_array(*a),
        (method, choice) => {
            return Err(CoreError::Relabel(format!(
                "verdict {choice:?} does not fit method {}",
                method.as_str()
            )))
        }
    };
    validate_action(&resolved).map_err(|v| CoreError::Relabel(format!("resolved action {resolved}: {v}")))?;
    Ok(resolved)
}

fn out_of_range(i: usize, set: &CandidateSet) -> CoreError {
    CoreError::Relabel(format!("candidate index {i} out of range for {} candidates", set.candidates.len()))
}

//! Domain values shared by every stage of the loop: integer-scaled actions,
//! textualizable observations, steps, corrections and trajectories.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::CoreError;

/// Gripper command closing the jaws.
pub const GRIP_CLOSED: i32 = 100;
/// Gripper command opening the jaws.
pub const GRIP_OPEN: i32 = -100;
/// Bound on every motion component.
pub const MOTION_LIMIT: i32 = 100;

/// Number of action dimensions (six motion components plus grip).
pub const ACTION_DIM: usize = 7;

/// Seven-dimensional integer action `(dx, dy, dz, droll, dpitch, dyaw, grip)`.
///
/// Motion components live in `[-100, 100]`; `grip` is `-100` (open) or
/// `+100` (closed). Values outside those sets can be constructed (the critic
/// and the policy both produce raw numbers) and are caught by
/// [`validate_action`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "[i32; 7]", into = "[i32; 7]")]
pub struct Action {
    pub motion: [i32; 6],
    pub grip: i32,
}

impl Action {
    pub const fn new(dx: i32, dy: i32, dz: i32, droll: i32, dpitch: i32, dyaw: i32, grip: i32) -> Self {
        Self { motion: [dx, dy, dz, droll, dpitch, dyaw], grip }
    }

    /// No motion, gripper held at `grip`.
    pub const fn hold(grip: i32) -> Self {
        Self { motion: [0; 6], grip }
    }

    pub fn to_array(self) -> [i32; 7] {
        let m = self.motion;
        [m[0], m[1], m[2], m[3], m[4], m[5], self.grip]
    }

    pub fn from_array(a: [i32; 7]) -> Self {
        Self { motion: [a[0], a[1], a[2], a[3], a[4], a[5]], grip: a[6] }
    }

    /// Componentwise sum of the motion parts, clamped to the motion range.
    /// The grip of the result is `grip`.
    pub fn offset_clamped(self, delta: &Action, grip: i32) -> Action {
        let mut motion = [0; 6];
        for (i, m) in motion.iter_mut().enumerate() {
            *m = (self.motion[i] + delta.motion[i]).clamp(-MOTION_LIMIT, MOTION_LIMIT);
        }
        Action { motion, grip }
    }

    pub fn is_closed(&self) -> bool {
        self.grip == GRIP_CLOSED
    }
}

impl From<[i32; 7]> for Action {
    fn from(a: [i32; 7]) -> Self {
        Self::from_array(a)
    }
}

impl From<Action> for [i32; 7] {
    fn from(a: Action) -> Self {
        a.to_array()
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&crate::critic::prompts::format_int_array(&self.to_array()))
    }
}

/// Why an action failed validation.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ActionViolation {
    #[error("motion component out of range")]
    MotionOutOfRange { index: usize, value: i32 },
    #[error("grip must be ±100")]
    InvalidGrip(i32),
}

/// Checks the [`Action`] invariants.
pub fn validate_action(a: &Action) -> Result<(), ActionViolation> {
    if let Some((index, &value)) = a.motion.iter().enumerate().find(|(_, v)| v.abs() > MOTION_LIMIT) {
        return Err(ActionViolation::MotionOutOfRange { index, value });
    }
    if a.grip != GRIP_OPEN && a.grip != GRIP_CLOSED {
        return Err(ActionViolation::InvalidGrip(a.grip));
    }
    Ok(())
}

/// Pose of a named scene object, in scaled integer units.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ObjectPose {
    pub name: String,
    pub position: [i32; 3],
    pub angles: [i32; 3],
}

/// Textualizable robot state. Positions are centimetres of the world frame,
/// angles whole degrees.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Observation {
    pub ee_position: [i32; 3],
    pub ee_angles: [i32; 3],
    pub gripper_state: i32,
    pub objects: Vec<ObjectPose>,
    /// Task-stage index; ground truth for scripted components only.
    pub stage_hint: Option<usize>,
}

impl Observation {
    pub fn object(&self, name: &str) -> Option<&ObjectPose> {
        self.objects.iter().find(|o| o.name == name)
    }

    /// Flat integer encoding used by the archive: ee position, ee angles,
    /// gripper, then six numbers per object in `objects` order.
    pub fn to_flat(&self) -> Vec<i32> {
        let mut v = Vec::with_capacity(7 + 6 * self.objects.len());
        v.extend_from_slice(&self.ee_position);
        v.extend_from_slice(&self.ee_angles);
        v.push(self.gripper_state);
        for o in &self.objects {
            v.extend_from_slice(&o.position);
            v.extend_from_slice(&o.angles);
        }
        v
    }

    pub fn from_flat(flat: &[i32], names: &[String], stage_hint: Option<usize>) -> Result<Self, CoreError> {
        if flat.len() != 7 + 6 * names.len() {
            return Err(CoreError::Format(format!(
                "observation has {} values, expected {} for {} objects",
                flat.len(),
                7 + 6 * names.len(),
                names.len()
            )));
        }
        let objects = names
            .iter()
            .enumerate()
            .map(|(i, name)| {
                let o = 7 + 6 * i;
                ObjectPose {
                    name: name.clone(),
                    position: [flat[o], flat[o + 1], flat[o + 2]],
                    angles: [flat[o + 3], flat[o + 4], flat[o + 5]],
                }
            })
            .collect();
        Ok(Self {
            ee_position: [flat[0], flat[1], flat[2]],
            ee_angles: [flat[3], flat[4], flat[5]],
            gripper_state: flat[6],
            objects,
            stage_hint,
        })
    }
}

/// Who produced the action recorded at a step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Actor {
    Policy,
    Intervention,
    Relabeled,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Step {
    pub t: usize,
    pub obs: Observation,
    /// Training target: the executed action, or the critic's relabel.
    pub action: Action,
    pub actor: Actor,
    /// The executed action when `action` was relabeled.
    pub original_action: Option<Action>,
}

impl Step {
    pub fn new(t: usize, obs: Observation, action: Action, actor: Actor) -> Self {
        Self { t, obs, action, actor, original_action: None }
    }

    /// The action the robot actually executed at this step.
    pub fn executed_action(&self) -> Action {
        self.original_action.unwrap_or(self.action)
    }
}

/// Region of a trajectory relative to the stop and the intervention.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegmentLabel {
    Nominal,
    PreIntervention,
    Intervention,
    PostIntervention,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeedbackStyle {
    Long,
    Short,
    None,
}

impl FeedbackStyle {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Long => "long",
            Self::Short => "short",
            Self::None => "none",
        }
    }
}

impl std::str::FromStr for FeedbackStyle {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "long" => Ok(Self::Long),
            "short" => Ok(Self::Short),
            "none" => Ok(Self::None),
            other => Err(CoreError::Parameter(format!("unknown feedback style {other:?}"))),
        }
    }
}

/// Natural-language correction given when the user stopped the robot.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerbalCorrection {
    pub text: String,
    pub at: usize,
    pub style: FeedbackStyle,
}

impl VerbalCorrection {
    pub fn new(text: impl Into<String>, at: usize, style: FeedbackStyle) -> Result<Self, CoreError> {
        let text = text.into();
        if text.trim().is_empty() && style != FeedbackStyle::None {
            return Err(CoreError::Invariant("correction text is empty".into()));
        }
        Ok(Self { text, at, style })
    }

    /// The no-feedback placeholder used by the feedback ablation.
    pub fn silent(at: usize) -> Self {
        Self { text: String::new(), at, style: FeedbackStyle::None }
    }
}

/// Half-open step interval `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        Self { start, end }
    }

    pub fn len(&self) -> usize {
        self.end.saturating_sub(self.start)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn contains(&self, t: usize) -> bool {
        t >= self.start && t < self.end
    }
}

/// How a relabeled trajectory was produced.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub method: String,
    pub mode: String,
    pub backend: String,
    pub selection_queries: usize,
    pub gripper_queries: usize,
    /// Identifier of the transcript records for this trajectory.
    pub transcript_ref: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trajectory {
    pub task: String,
    pub seed: u64,
    pub steps: Vec<Step>,
    /// Observation after the last step, `o_H` (equal to `o_T` when the
    /// rollout ended at the stop).
    pub final_obs: Option<Observation>,
    pub stop_index: Option<usize>,
    /// What the policy wanted to do at `o_T` when it was stopped.
    pub stop_action: Option<Action>,
    pub correction: Option<VerbalCorrection>,
    pub intervention_span: Option<Span>,
    /// Pre-intervention window length the labels were computed with.
    pub window: usize,
    pub labels: Vec<SegmentLabel>,
    pub success: bool,
    /// Set for live sessions that disconnected before `end`.
    pub incomplete: bool,
    pub provenance: Option<Provenance>,
}

impl Trajectory {
    pub fn new(task: impl Into<String>, seed: u64) -> Self {
        Self {
            task: task.into(),
            seed,
            steps: Vec::new(),
            final_obs: None,
            stop_index: None,
            stop_action: None,
            correction: None,
            intervention_span: None,
            window: crate::segment::DEFAULT_WINDOW,
            labels: Vec::new(),
            success: false,
            incomplete: false,
            provenance: None,
        }
    }

    /// Number of recorded steps `H`.
    pub fn horizon(&self) -> usize {
        self.steps.len()
    }

    /// Observation at time `t`, falling back to `final_obs` at `t == H`.
    pub fn observation_at(&self, t: usize) -> Option<&Observation> {
        if t < self.steps.len() {
            Some(&self.steps[t].obs)
        } else if t == self.steps.len() {
            self.final_obs.as_ref()
        } else {
            None
        }
    }

    pub fn is_stopped(&self) -> bool {
        self.stop_index.is_some()
    }

    /// Recomputes `labels` for window `k`.
    pub fn relabel_segments(&mut self, k: usize) -> Result<(), CoreError> {
        self.labels = crate::segment::segment_trajectory(self, k)?;
        self.window = k;
        Ok(())
    }

    /// Structural invariants: contiguous zero-based time indices, event
    /// consistency and labels matching the segmentation.
    pub fn validate(&self) -> Result<(), CoreError> {
        for (i, s) in self.steps.iter().enumerate() {
            if s.t != i {
                return Err(CoreError::Invariant(format!("step {i} carries time index {}", s.t)));
            }
        }
        if let Some(c) = &self.correction {
            match self.stop_index {
                Some(t) if t == c.at => {}
                _ => return Err(CoreError::Invariant("correction is not at the stop index".into())),
            }
        }
        if self.intervention_span.is_some() && self.stop_index.is_none() {
            return Err(CoreError::Invariant("intervention without a stop".into()));
        }
        let expected = crate::segment::segment_trajectory(self, self.window)?;
        if expected != self.labels {
            return Err(CoreError::Invariant("labels disagree with segmentation".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn onedim_candidate_is_valid() {
        assert_eq!(validate_action(&Action::new(20, 0, 0, 0, 0, 0, -100)), Ok(()));
    }

    #[test]
    fn grip_zero_rejected() {
        let err = validate_action(&Action::new(0, 0, 0, 0, 0, 0, 0)).unwrap_err();
        assert_eq!(err.to_string(), "grip must be ±100");
    }

    #[test]
    fn motion_out_of_range_rejected() {
        let err = validate_action(&Action::new(150, 0, 0, 0, 0, 0, 100)).unwrap_err();
        assert_eq!(err.to_string(), "motion component out of range");
        assert!(matches!(err, ActionViolation::MotionOutOfRange { index: 0, value: 150 }));
    }

    #[test]
    fn action_serializes_as_flat_array() {
        let a = Action::new(0, 0, 20, 0, 0, -30, 100);
        assert_eq!(serde_json::to_string(&a).unwrap(), "[0,0,20,0,0,-30,100]");
        let back: Action = serde_json::from_str("[0,0,20,0,0,-30,100]").unwrap();
        assert_eq!(back, a);
    }

    #[test]
    fn offset_clamps() {
        let a = Action::new(95, 0, 0, 0, 0, 0, -100);
        let d = Action::new(20, 0, 0, 0, 0, 0, -100);
        assert_eq!(a.offset_clamped(&d, 100), Action::new(100, 0, 0, 0, 0, 0, 100));
    }

    #[test]
    fn empty_correction_needs_none_style() {
        assert!(VerbalCorrection::new("  ", 3, FeedbackStyle::Long).is_err());
        assert!(VerbalCorrection::new("", 3, FeedbackStyle::None).is_ok());
    }
}

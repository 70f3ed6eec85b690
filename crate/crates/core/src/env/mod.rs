//! Deterministic kinematic pick-and-place environment with a scripted
//! expert and a scripted user.

pub mod expert;
pub mod rollout;
pub mod task;
pub mod user;
pub mod world;

pub use expert::ScriptedExpert;
pub use rollout::{rollout, RolloutConfig};
pub use task::{ObjectSpec, PromptContext, ResolvedStage, SubgoalStage, TaskSpec};
pub use user::{ScriptedUser, UserConfig, UserEvent};
pub use world::{Env, Intent, SceneView, StepResult, WorldState};

use crate::types::{Action, Observation};

/// Anything that picks actions during a rollout.
pub trait Controller {
    /// Called at the start of every episode.
    fn reset(&mut self) {}

    fn act(&mut self, env: &Env, state: &WorldState, obs: &Observation) -> Action;

    /// Told about every executed step, including ones it did not choose
    /// (interventions), so history-based controllers stay consistent.
    /// `obs` is the observation the action was executed from.
    fn record(&mut self, _obs: &Observation, _executed: &Action) {}
}

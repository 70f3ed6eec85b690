use super::expert::ScriptedExpert;
use super::user::{ScriptedUser, UserEvent};
use super::world::Env;
use super::Controller;
use crate::error::Result;
use crate::segment::DEFAULT_WINDOW;
use crate::types::{Actor, Span, Step, Trajectory, VerbalCorrection};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RolloutConfig {
    /// Window used to label the recorded trajectory.
    pub window: usize,
    /// Demonstrator that takes over during interventions.
    pub expert: ScriptedExpert,
}

impl Default for RolloutConfig {
    fn default() -> Self {
        Self { window: DEFAULT_WINDOW, expert: ScriptedExpert::default() }
    }
}

enum Mode {
    Policy,
    Intervention { stage: usize, start: usize },
}

/// Runs one episode of `controller` on `env`, optionally watched by a
/// scripted user.
///
/// On a plain stop the episode ends and `o_T` becomes the final
/// observation. On a stop with intervention the scripted expert drives
/// until the stage that was active at the stop completes, then control
/// returns to the controller for the rest of the episode.
pub fn rollout(
    env: &Env,
    seed: u64,
    controller: &mut dyn Controller,
    mut user: Option<&mut ScriptedUser>,
    cfg: &RolloutConfig,
) -> Result<Trajectory> {
    let (mut state, mut obs) = env.reset(seed);
    controller.reset();
    let mut traj = Trajectory::new(env.task().name.clone(), seed);
    let mut mode = Mode::Policy;
    let max_intervention = user.as_ref().map(|u| u.config().max_intervention).unwrap_or(0);
    while !env.is_done(&state) {
        let t = traj.steps.len();
        let (action, actor) = match mode {
            Mode::Policy => {
                let action = controller.act(env, &state, &obs);
                let event = match user.as_deref_mut() {
                    Some(u) => u.decide(env, &state, t, &action),
                    None => UserEvent::Continue,
                };
                let (text, style, intervene) = match event {
                    UserEvent::Continue => {
                        step_and_record(env, &mut state, &mut obs, &mut traj, controller, user.as_deref_mut(), action, Actor::Policy)?;
                        continue;
                    }
                    UserEvent::Stop { text, style } => (text, style, false),
                    UserEvent::StopAndIntervene { text, style } => (text, style, true),
                };
                traj.stop_index = Some(t);
                traj.stop_action = Some(action);
                traj.correction = Some(VerbalCorrection { text, at: t, style });
                if !intervene || max_intervention == 0 {
                    break;
                }
                mode = Mode::Intervention { stage: state.stage, start: t };
                (cfg.expert.act(env, &state), Actor::Intervention)
            }
            Mode::Intervention { .. } => (cfg.expert.act(env, &state), Actor::Intervention),
        };
        step_and_record(env, &mut state, &mut obs, &mut traj, controller, user.as_deref_mut(), action, actor)?;
        if let Mode::Intervention { stage, start } = mode {
            if state.stage > stage || env.is_done(&state) || t + 1 - start >= max_intervention {
                traj.intervention_span = Some(Span::new(start, t + 1));
                mode = Mode::Policy;
            }
        }
    }
    if let Mode::Intervention { start, .. } = mode {
        traj.intervention_span = Some(Span::new(start, traj.steps.len()));
    }
    traj.final_obs = Some(obs);
    traj.success = env.is_success(&state);
    traj.relabel_segments(cfg.window)?;
    Ok(traj)
}

#[allow(clippy::too_many_arguments)]
fn step_and_record(
    env: &Env,
    state: &mut super::world::WorldState,
    obs: &mut crate::types::Observation,
    traj: &mut Trajectory,
    controller: &mut dyn Controller,
    user: Option<&mut ScriptedUser>,
    action: crate::types::Action,
    actor: Actor,
) -> Result<()> {
    let t = traj.steps.len();
    let r = env.step(state, &action)?;
    controller.record(obs, &action);
    traj.steps.push(Step::new(t, std::mem::replace(obs, r.obs), action, actor));
    if let Some(u) = user {
        u.observe(env, state, &action, &r.state, t);
    }
    *state = r.state;
    Ok(())
}

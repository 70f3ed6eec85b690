//! The per-session state machine, independent of any transport.
//!
//! Control moves `policy_control → stopped_awaiting_correction →
//! human_control → policy_control`. A correction always hands control to
//! the human; `release` gives it back. Releasing without any teleoperation
//! either resumes the policy or ends the rollout, per configuration.

use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;
use std::sync::Arc;

use olaf_core::archive;
use olaf_core::env::{Controller, Env, ScriptedExpert, WorldState};
use olaf_core::language::{parse, GripDirective};
use olaf_core::learner::{PolicyController, PolicyParams};
use olaf_core::segment::DEFAULT_WINDOW;
use olaf_core::types::{
    validate_action, Action, Actor, FeedbackStyle, Observation, Span, Step, Trajectory, VerbalCorrection,
};
use serde::{Deserialize, Serialize};

use crate::error::{HitlError, ProtocolError};
use crate::protocol::{AckEvent, ActionSchema, ClientMessage, Frame, Mode, ServerMessage, TaskSchema};

/// The controller driving the robot under policy control.
#[derive(Debug, Clone)]
pub enum PolicySource {
    Expert(ScriptedExpert),
    Checkpoint(Arc<PolicyParams>),
}

impl PolicySource {
    fn controller(&self) -> Box<dyn Controller + Send> {
        match self {
            Self::Expert(e) => Box::new(*e),
            Self::Checkpoint(p) => Box::new(PolicyController::new(Arc::clone(p))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SessionConfig {
    pub env: Arc<Env>,
    pub policy: PolicySource,
    /// Pre-intervention window the persisted labels are computed with.
    pub window: usize,
    /// Directory finished trajectories are written to; `None` keeps them in
    /// memory only.
    pub out_dir: Option<PathBuf>,
    /// Whether `release` without teleoperation resumes the policy (true) or
    /// ends the rollout at the stop (false, the scripted-user convention).
    pub resume_after_plain_stop: bool,
}

impl SessionConfig {
    pub fn new(env: Env, policy: PolicySource) -> Self {
        Self { env: Arc::new(env), policy, window: DEFAULT_WINDOW, out_dir: None, resume_after_plain_stop: false }
    }

    pub fn validate(&self) -> Result<(), HitlError> {
        if self.window == 0 {
            return Err(HitlError::Config("window must be positive".into()));
        }
        if let PolicySource::Checkpoint(p) = &self.policy {
            let expected = olaf_core::learner::FeatureSpec::for_env(&self.env, p.features.stage_hint.is_some());
            if p.features != expected {
                return Err(HitlError::Config(format!(
                    "checkpoint features do not match task {:?}",
                    self.env.task().name
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionPhase {
    Idle,
    Running,
    Finished,
}

/// Snapshot served by the session-list endpoint.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionStatus {
    pub id: String,
    pub phase: SessionPhase,
    pub mode: Option<Mode>,
    pub task: String,
    pub seed: Option<u64>,
    pub step: usize,
    pub clients: usize,
    pub completed: usize,
}

/// Style of a typed correction: directional or gripper instructions are
/// long-form, anything else non-empty is short-form.
pub fn infer_style(text: &str) -> FeedbackStyle {
    if text.trim().is_empty() {
        return FeedbackStyle::None;
    }
    let parsed = parse(text);
    if !parsed.directions.is_empty() || parsed.grip != GripDirective::Unchanged {
        FeedbackStyle::Long
    } else {
        FeedbackStyle::Short
    }
}

struct Rollout {
    state: WorldState,
    obs: Observation,
    traj: Trajectory,
    controller: Box<dyn Controller + Send>,
    mode: Mode,
    last_action: Option<Action>,
    teleops: usize,
}

pub struct LiveSession {
    id: String,
    cfg: SessionConfig,
    rollout: Option<Rollout>,
    phase: SessionPhase,
    clients: usize,
    completed: Vec<Trajectory>,
    persisted: Vec<PathBuf>,
}

impl LiveSession {
    pub fn new(id: impl Into<String>, cfg: SessionConfig) -> Self {
        Self {
            id: id.into(),
            cfg,
            rollout: None,
            phase: SessionPhase::Idle,
            clients: 0,
            completed: Vec::new(),
            persisted: Vec::new(),
        }
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn phase(&self) -> SessionPhase {
        self.phase
    }

    /// Control mode of the running rollout.
    pub fn mode(&self) -> Option<Mode> {
        self.rollout.as_ref().map(|r| r.mode)
    }

    /// Finished trajectories, in completion order.
    pub fn completed(&self) -> &[Trajectory] {
        &self.completed
    }

    /// Archive files written so far.
    pub fn persisted(&self) -> &[PathBuf] {
        &self.persisted
    }

    pub fn status(&self) -> SessionStatus {
        SessionStatus {
            id: self.id.clone(),
            phase: self.phase,
            mode: self.mode(),
            task: self.cfg.env.task().name.clone(),
            seed: self.rollout.as_ref().map(|r| r.traj.seed),
            step: self.rollout.as_ref().map_or(0, |r| r.traj.steps.len()),
            clients: self.clients,
            completed: self.completed.len(),
        }
    }

    pub fn hello(&self, tick_hz: f64) -> ServerMessage {
        ServerMessage::Hello {
            session: self.id.clone(),
            task: TaskSchema::from_spec(self.cfg.env.task()),
            action_schema: ActionSchema::default(),
            mode: self.mode(),
            tick_hz,
        }
    }

    pub fn client_joined(&mut self) {
        self.clients += 1;
    }

    /// Records a departing client. When the last one leaves mid-rollout the
    /// trajectory is finalized as incomplete and returned messages describe
    /// that.
    pub fn client_left(&mut self) -> Vec<ServerMessage> {
        self.clients = self.clients.saturating_sub(1);
        if self.clients == 0 && self.rollout.is_some() {
            vec![self.finalize(true)]
        } else {
            Vec::new()
        }
    }

    pub fn clients(&self) -> usize {
        self.clients
    }

    /// Advances one step under policy control. Returns the resulting frame
    /// (and `done` when the episode ended); nothing in any other mode.
    pub fn tick(&mut self) -> Vec<ServerMessage> {
        let Some(r) = self.rollout.as_mut() else {
            return Vec::new();
        };
        if r.mode != Mode::PolicyControl {
            return Vec::new();
        }
        let env = Arc::clone(&self.cfg.env);
        let action = r.controller.act(&env, &r.state, &r.obs);
        // Policies emit arbitrary numbers; clamp so the environment accepts them.
        let action = sanitize(action);
        self.execute(action, Actor::Policy)
    }

    /// Applies a client command. Rejected commands leave the session
    /// unchanged.
    pub fn handle(&mut self, msg: ClientMessage) -> Result<Vec<ServerMessage>, ProtocolError> {
        let state = match (self.phase, self.mode()) {
            (_, Some(m)) => m.as_str(),
            (SessionPhase::Idle, None) => "idle",
            (_, None) => "finished",
        };
        let out_of_order = |command| ProtocolError::OutOfOrder { command, state: state.to_string() };
        match msg {
            ClientMessage::Start { task, seed } => {
                if self.rollout.is_some() {
                    return Err(out_of_order("start"));
                }
                let name = &self.cfg.env.task().name;
                if let Some(t) = task.filter(|t| t != name) {
                    return Err(ProtocolError::UnknownTask(t));
                }
                let env = Arc::clone(&self.cfg.env);
                let (state, obs) = env.reset(seed);
                let mut controller = self.cfg.policy.controller();
                controller.reset();
                let mut traj = Trajectory::new(name.clone(), seed);
                traj.window = self.cfg.window;
                self.rollout =
                    Some(Rollout { state, obs, traj, controller, mode: Mode::PolicyControl, last_action: None, teleops: 0 });
                self.phase = SessionPhase::Running;
                let ack = self.ack(AckEvent::Start { task: name.clone(), seed });
                let frame = self.frame();
                Ok(vec![ack, frame])
            }
            ClientMessage::Stop => {
                let env = Arc::clone(&self.cfg.env);
                let r = self.rollout.as_mut().filter(|r| r.mode == Mode::PolicyControl).ok_or_else(|| out_of_order("stop"))?;
                if r.traj.stop_index.is_some() {
                    return Err(ProtocolError::AlreadyCorrected);
                }
                let t = r.traj.steps.len();
                let intended = sanitize(r.controller.act(&env, &r.state, &r.obs));
                r.traj.stop_index = Some(t);
                r.traj.stop_action = Some(intended);
                r.mode = Mode::StoppedAwaitingCorrection;
                Ok(vec![self.ack(AckEvent::Stop { t })])
            }
            ClientMessage::Correction { text } => {
                let r = self
                    .rollout
                    .as_mut()
                    .filter(|r| r.mode == Mode::StoppedAwaitingCorrection)
                    .ok_or_else(|| out_of_order("correction"))?;
                let t = r.traj.stop_index.expect("stopped rollouts carry a stop index");
                let text = text.trim().to_string();
                let style = infer_style(&text);
                r.traj.correction = Some(VerbalCorrection { text: text.clone(), at: t, style });
                r.mode = Mode::HumanControl;
                Ok(vec![self.ack(AckEvent::Correction { t, text, style: style.as_str().to_string() })])
            }
            ClientMessage::Teleop { action } => {
                if self.mode() != Some(Mode::HumanControl) {
                    return Err(out_of_order("teleop"));
                }
                validate_action(&action).map_err(|v| ProtocolError::InvalidAction(format!("{action}: {v}")))?;
                let r = self.rollout.as_mut().expect("human control implies a rollout");
                let t = r.traj.steps.len();
                r.teleops += 1;
                let mut out = vec![self.ack(AckEvent::Teleop { t })];
                out.extend(self.execute(action, Actor::Intervention));
                Ok(out)
            }
            ClientMessage::Release => {
                if self.mode() != Some(Mode::HumanControl) {
                    return Err(out_of_order("release"));
                }
                let r = self.rollout.as_mut().expect("human control implies a rollout");
                let t = r.traj.steps.len();
                let span = close_intervention(r);
                if r.teleops == 0 && !self.cfg.resume_after_plain_stop {
                    let ack = self.ack(AckEvent::Release { t, intervention: None });
                    return Ok(vec![ack, self.finalize(false)]);
                }
                r.mode = Mode::PolicyControl;
                Ok(vec![self.ack(AckEvent::Release { t, intervention: span.map(|s| [s.start, s.end]) })])
            }
            ClientMessage::End => {
                let r = self.rollout.as_ref().ok_or_else(|| out_of_order("end"))?;
                let ack = self.ack(AckEvent::End { t: r.traj.steps.len() });
                Ok(vec![ack, self.finalize(false)])
            }
        }
    }

    fn ack(&self, event: AckEvent) -> ServerMessage {
        ServerMessage::EventAck { event, mode: self.mode() }
    }

    fn frame(&self) -> ServerMessage {
        let r = self.rollout.as_ref().expect("frames are only built for running rollouts");
        ServerMessage::Frame(Frame {
            t: r.traj.steps.len(),
            obs: r.obs.clone(),
            last_action: r.last_action,
            mode: r.mode,
            stage: r.state.stage,
            stages: self.cfg.env.stages().len(),
        })
    }

    fn execute(&mut self, action: Action, actor: Actor) -> Vec<ServerMessage> {
        let env = Arc::clone(&self.cfg.env);
        let r = self.rollout.as_mut().expect("execute requires a rollout");
        let step = match env.step(&r.state, &action) {
            Ok(s) => s,
            Err(e) => {
                // Actions are validated or sanitized before reaching here.
                log::error!("session {}: step rejected: {e}", self.id);
                return Vec::new();
            }
        };
        r.controller.record(&r.obs, &action);
        let t = r.traj.steps.len();
        r.traj.steps.push(Step::new(t, std::mem::replace(&mut r.obs, step.obs), action, actor));
        r.state = step.state;
        r.last_action = Some(action);
        let mut out = vec![self.frame()];
        if env.is_done(&self.rollout.as_ref().expect("still running").state) {
            out.push(self.finalize(false));
        }
        out
    }

    /// Closes the rollout, persists the trajectory and returns `done`.
    fn finalize(&mut self, incomplete: bool) -> ServerMessage {
        let mut r = self.rollout.take().expect("finalize requires a rollout");
        if r.mode == Mode::HumanControl {
            close_intervention(&mut r);
        }
        let success = self.cfg.env.is_success(&r.state);
        let mut traj = r.traj;
        traj.final_obs = Some(r.obs);
        traj.success = success;
        traj.incomplete = incomplete;
        if let Err(e) = traj.relabel_segments(self.cfg.window).and_then(|_| traj.validate()) {
            log::error!("session {}: finished trajectory fails validation: {e}", self.id);
        }
        let path = match self.persist(&traj) {
            Ok(p) => p,
            Err(e) => {
                log::error!("session {}: could not persist trajectory: {e}", self.id);
                None
            }
        };
        let done = ServerMessage::Done {
            success,
            steps: traj.steps.len(),
            stop_index: traj.stop_index,
            intervention: traj.intervention_span.map(|s| [s.start, s.end]),
            incomplete,
            path: path.as_ref().map(|p| p.display().to_string()),
        };
        self.completed.push(traj);
        self.phase = SessionPhase::Finished;
        done
    }

    /// Writes a new archive file; existing files are never overwritten.
    fn persist(&mut self, traj: &Trajectory) -> Result<Option<PathBuf>, HitlError> {
        let Some(dir) = &self.cfg.out_dir else {
            return Ok(None);
        };
        std::fs::create_dir_all(dir)?;
        let path = dir.join(format!("{}-{:03}.jsonl", self.id, self.completed.len()));
        let file = File::create_new(&path)?;
        archive::write_to(BufWriter::new(file), std::slice::from_ref(traj))?;
        self.persisted.push(path.clone());
        Ok(Some(path))
    }
}

/// Records the intervention span covering every teleoperated step, if any.
fn close_intervention(r: &mut Rollout) -> Option<Span> {
    let start = r.traj.stop_index?;
    if r.teleops == 0 {
        return None;
    }
    let span = Span::new(start, start + r.teleops);
    r.traj.intervention_span = Some(span);
    Some(span)
}

fn sanitize(a: Action) -> Action {
    let mut a = a;
    for m in &mut a.motion {
        *m = (*m).clamp(-olaf_core::types::MOTION_LIMIT, olaf_core::types::MOTION_LIMIT);
    }
    a.grip = if a.grip > 0 { olaf_core::types::GRIP_CLOSED } else { olaf_core::types::GRIP_OPEN };
    a
}

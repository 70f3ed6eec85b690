//! Wire protocol: JSON text messages over a websocket, tagged by `type`.

use olaf_core::env::TaskSpec;
use olaf_core::types::{Action, Observation, GRIP_CLOSED, GRIP_OPEN, MOTION_LIMIT};
use serde::{Deserialize, Serialize};

use crate::error::ProtocolError;

/// Who controls the robot during a running rollout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    PolicyControl,
    StoppedAwaitingCorrection,
    HumanControl,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::PolicyControl => "policy_control",
            Self::StoppedAwaitingCorrection => "stopped_awaiting_correction",
            Self::HumanControl => "human_control",
        }
    }
}

/// Client → server commands.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ClientMessage {
    /// Begin a rollout. `task` defaults to the served task.
    Start {
        #[serde(default)]
        task: Option<String>,
        seed: u64,
    },
    Stop,
    Correction { text: String },
    /// One human action, in the same integer schema the policy emits.
    Teleop { action: Action },
    Release,
    End,
}

impl ClientMessage {
    pub fn parse(text: &str) -> Result<Self, ProtocolError> {
        serde_json::from_str(text).map_err(|e| ProtocolError::Malformed(e.to_string()))
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Start { .. } => "start",
            Self::Stop => "stop",
            Self::Correction { .. } => "correction",
            Self::Teleop { .. } => "teleop",
            Self::Release => "release",
            Self::End => "end",
        }
    }
}

/// One environment step as seen by the operator.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Frame {
    /// Number of steps executed so far; `obs` is the observation at `t`.
    pub t: usize,
    pub obs: Observation,
    /// Action that produced `obs` (absent on the initial frame).
    pub last_action: Option<Action>,
    pub mode: Mode,
    /// Current subgoal stage and total number of stages.
    pub stage: usize,
    pub stages: usize,
}

/// Which command an `event_ack` confirms.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum AckEvent {
    Start { task: String, seed: u64 },
    Stop { t: usize },
    Correction { t: usize, text: String, style: String },
    Teleop { t: usize },
    Release { t: usize, intervention: Option<[usize; 2]> },
    End { t: usize },
}

/// Server → client messages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMessage {
    Hello {
        session: String,
        task: TaskSchema,
        action_schema: ActionSchema,
        /// Control mode if a rollout is running.
        mode: Option<Mode>,
        tick_hz: f64,
    },
    Frame(Frame),
    EventAck {
        #[serde(flatten)]
        event: AckEvent,
        mode: Option<Mode>,
    },
    Error {
        code: String,
        message: String,
        mode: Option<Mode>,
    },
    Done {
        success: bool,
        steps: usize,
        stop_index: Option<usize>,
        intervention: Option<[usize; 2]>,
        incomplete: bool,
        /// Archive file the trajectory was written to, if persisted.
        path: Option<String>,
    },
}

impl ServerMessage {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("server messages always serialize")
    }

    pub fn error(e: &ProtocolError, mode: Option<Mode>) -> Self {
        Self::Error { code: e.code().to_string(), message: e.to_string(), mode }
    }
}

/// What the client needs to render the task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSchema {
    pub name: String,
    pub objects: Vec<String>,
    /// Human-readable stage descriptions, in order.
    pub stages: Vec<String>,
    pub horizon: usize,
    pub summary: String,
}

impl TaskSchema {
    pub fn from_spec(spec: &TaskSpec) -> Self {
        Self {
            name: spec.name.clone(),
            objects: spec.objects.iter().map(|o| o.name.clone()).collect(),
            stages: spec.prompt.stages.clone(),
            horizon: spec.horizon,
            summary: spec.prompt.summary.clone(),
        }
    }
}

/// Layout of the integer action array accepted by `teleop`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionSchema {
    pub fields: Vec<String>,
    pub motion_range: [i32; 2],
    pub grip_open: i32,
    pub grip_closed: i32,
}

impl Default for ActionSchema {
    fn default() -> Self {
        Self {
            fields: ["dx", "dy", "dz", "droll", "dpitch", "dyaw", "grip"].map(String::from).to_vec(),
            motion_range: [-MOTION_LIMIT, MOTION_LIMIT],
            grip_open: GRIP_OPEN,
            grip_closed: GRIP_CLOSED,
        }
    }
}

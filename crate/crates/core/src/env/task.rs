use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

/// Uniform ranges (inclusive) for an object's initial pose, in centimetres
/// and degrees.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectSpec {
    pub name: String,
    pub x: [f64; 2],
    pub y: [f64; 2],
    pub z: [f64; 2],
    #[serde(default)]
    pub yaw: [f64; 2],
}

impl ObjectSpec {
    pub fn fixed(name: &str, pos: [f64; 3], yaw: f64) -> Self {
        Self {
            name: name.into(),
            x: [pos[0], pos[0]],
            y: [pos[1], pos[1]],
            z: [pos[2], pos[2]],
            yaw: [yaw, yaw],
        }
    }

    pub fn uniform(name: &str, x: [f64; 2], y: [f64; 2], z: f64) -> Self {
        Self { name: name.into(), x, y, z: [z, z], yaw: [0.0, 0.0] }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SubgoalStage {
    /// Bring the end-effector onto `object` (and match its yaw when `align_yaw`).
    Reach {
        object: String,
        #[serde(default)]
        align_yaw: bool,
    },
    /// Close the gripper on `object`.
    Grasp { object: String },
    /// Carry the most recently grasped object onto `target`.
    Transport { target: String },
    /// Open the gripper with the carried object on the transport target.
    Release,
}

/// Text shown to the critic describing the task.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptContext {
    pub summary: String,
    /// One entry per stage, e.g. `"Grasping the Can: Approach the can."`.
    pub stages: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub name: String,
    pub objects: Vec<ObjectSpec>,
    pub stages: Vec<SubgoalStage>,
    pub horizon: usize,
    /// Position tolerance of every stage predicate, centimetres.
    pub pos_tolerance: f64,
    /// Yaw tolerance for aligned reaches, degrees.
    #[serde(default = "default_yaw_tolerance")]
    pub yaw_tolerance: f64,
    /// Minimum horizontal distance between sampled objects, centimetres.
    #[serde(default)]
    pub min_separation: f64,
    #[serde(default = "default_ee_start")]
    pub ee_start: [f64; 3],
    pub prompt: PromptContext,
}

fn default_yaw_tolerance() -> f64 {
    3.0
}

fn default_ee_start() -> [f64; 3] {
    [0.0, 0.0, 60.0]
}

/// A stage with object references resolved to indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResolvedStage {
    Reach { object: usize, align_yaw: bool },
    Grasp { object: usize },
    Transport { object: usize, target: usize },
    Release { object: usize, target: usize },
}

impl ResolvedStage {
    /// The object this stage manipulates.
    pub fn object(&self) -> usize {
        match *self {
            Self::Reach { object, .. }
            | Self::Grasp { object }
            | Self::Transport { object, .. }
            | Self::Release { object, .. } => object,
        }
    }
}

impl TaskSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        let spec: TaskSpec = serde_json::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn object_index(&self, name: &str) -> Option<usize> {
        self.objects.iter().position(|o| o.name == name)
    }

    pub fn validate(&self) -> Result<()> {
        if self.stages.is_empty() {
            return Err(CoreError::Parameter(format!("task {} has no stages", self.name)));
        }
        if !(self.pos_tolerance > 0.0) || !(self.yaw_tolerance > 0.0) {
            return Err(CoreError::Parameter("tolerances must be positive".into()));
        }
        if self.horizon == 0 {
            return Err(CoreError::Parameter("horizon must be positive".into()));
        }
        for (i, o) in self.objects.iter().enumerate() {
            if self.objects[..i].iter().any(|p| p.name == o.name) {
                return Err(CoreError::Parameter(format!("duplicate object {}", o.name)));
            }
            for r in [o.x, o.y, o.z, o.yaw] {
                if !(r[0].is_finite() && r[1].is_finite()) || r[0] > r[1] {
                    return Err(CoreError::Parameter(format!("bad sampler range for {}", o.name)));
                }
            }
        }
        self.resolve_stages().map(|_| ())
    }

    /// Resolves object names and checks stage ordering: every grasp follows
    /// a reach of the same object, transports follow a grasp and releases
    /// follow a transport.
    pub fn resolve_stages(&self) -> Result<Vec<ResolvedStage>> {
        let lookup = |name: &str| {
            self.object_index(name)
                .ok_or_else(|| CoreError::Parameter(format!("stage references unknown object {name}")))
        };
        let mut out = Vec::with_capacity(self.stages.len());
        let mut last_reach: Option<usize> = None;
        let mut last_grasp: Option<usize> = None;
        let mut last_transport: Option<(usize, usize)> = None;
        for stage in &self.stages {
            let resolved = match stage {
                SubgoalStage::Reach { object, align_yaw } => {
                    let object = lookup(object)?;
                    last_reach = Some(object);
                    ResolvedStage::Reach { object, align_yaw: *align_yaw }
                }
                SubgoalStage::Grasp { object } => {
                    let object = lookup(object)?;
                    if last_reach != Some(object) {
                        return Err(CoreError::Parameter(format!(
                            "grasp of {} is not preceded by a reach of it",
                            self.objects[object].name
                        )));
                    }
                    last_grasp = Some(object);
                    ResolvedStage::Grasp { object }
                }
                SubgoalStage::Transport { target } => {
                    let target = lookup(target)?;
                    let object = last_grasp
                        .ok_or_else(|| CoreError::Parameter("transport before any grasp".into()))?;
                    last_transport = Some((object, target));
                    ResolvedStage::Transport { object, target }
                }
                SubgoalStage::Release => {
                    let (object, target) = last_transport
                        .ok_or_else(|| CoreError::Parameter("release before any transport".into()))?;
                    ResolvedStage::Release { object, target }
                }
            };
            out.push(resolved);
        }
        Ok(out)
    }

    /// Objects that can be picked up.
    pub fn graspable(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self
            .stages
            .iter()
            .filter_map(|s| match s {
                SubgoalStage::Grasp { object } => self.object_index(object),
                _ => None,
            })
            .collect();
        v.sort_unstable();
        v.dedup();
        v
    }

    pub fn builtin(name: &str) -> Result<Self> {
        let spec = match name {
            "reach" => reach(),
            "pickplace" => pickplace(),
            "pickplace-two" => pickplace_two(),
            "align-yaw" => align_yaw(),
            "square" => square(),
            other => return Err(CoreError::Parameter(format!("unknown task {other:?}"))),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn builtin_names() -> &'static [&'static str] {
        &["reach", "pickplace", "pickplace-two", "align-yaw", "square"]
    }
}

fn reach() -> TaskSpec {
    TaskSpec {
        name: "reach".into(),
        objects: vec![ObjectSpec::uniform("can", [-30.0, 30.0], [-30.0, 30.0], 5.0)],
        stages: vec![SubgoalStage::Reach { object: "can".into(), align_yaw: false }],
        horizon: 80,
        pos_tolerance: 4.0,
        yaw_tolerance: 3.0,
        min_separation: 0.0,
        ee_start: default_ee_start(),
        prompt: PromptContext {
            summary: "In this task, the robot must move its gripper to a can on the table.".into(),
            stages: vec!["Reaching the Can: Approach the can.".into()],
        },
    }
}

fn pickplace() -> TaskSpec {
    TaskSpec {
        name: "pickplace".into(),
        objects: vec![
            ObjectSpec::uniform("can", [-30.0, 30.0], [-30.0, 30.0], 5.0),
            ObjectSpec::uniform("bin", [-35.0, 35.0], [-35.0, 35.0], 15.0),
        ],
        stages: vec![
            SubgoalStage::Reach { object: "can".into(), align_yaw: false },
            SubgoalStage::Grasp { object: "can".into() },
            SubgoalStage::Transport { target: "bin".into() },
            SubgoalStage::Release,
        ],
        horizon: 150,
        pos_tolerance: 4.0,
        yaw_tolerance: 3.0,
        min_separation: 25.0,
        ee_start: default_ee_start(),
        prompt: PromptContext {
            summary: "In this task, the robot must pick up a can and place it into a bin.".into(),
            stages: vec![
                "Grasping the Can: Approach the can and close the gripper on it.".into(),
                "Placing: Carry the can to the bin and open the gripper.".into(),
            ],
        },
    }
}

fn pickplace_two() -> TaskSpec {
    TaskSpec {
        name: "pickplace-two".into(),
        objects: vec![
            ObjectSpec::uniform("can", [-30.0, 30.0], [-30.0, 30.0], 5.0),
            ObjectSpec::uniform("box", [-30.0, 30.0], [-30.0, 30.0], 5.0),
            ObjectSpec::uniform("bin", [-35.0, 35.0], [-35.0, 35.0], 15.0),
        ],
        stages: vec![
            SubgoalStage::Reach { object: "can".into(), align_yaw: false },
            SubgoalStage::Grasp { object: "can".into() },
            SubgoalStage::Transport { target: "bin".into() },
            SubgoalStage::Release,
            SubgoalStage::Reach { object: "box".into(), align_yaw: false },
            SubgoalStage::Grasp { object: "box".into() },
            SubgoalStage::Transport { target: "bin".into() },
            SubgoalStage::Release,
        ],
        horizon: 300,
        pos_tolerance: 4.0,
        yaw_tolerance: 3.0,
        min_separation: 20.0,
        ee_start: default_ee_start(),
        prompt: PromptContext {
            summary: "In this task, the robot must place a can and then a box into a bin.".into(),
            stages: vec![
                "Grasping the Can: Approach the can and close the gripper on it.".into(),
                "Placing the Can: Carry the can to the bin and open the gripper.".into(),
                "Grasping the Box: Approach the box and close the gripper on it.".into(),
                "Placing the Box: Carry the box to the bin and open the gripper.".into(),
            ],
        },
    }
}

fn align_yaw() -> TaskSpec {
    TaskSpec {
        name: "align-yaw".into(),
        objects: vec![ObjectSpec {
            name: "handle".into(),
            x: [-30.0, 30.0],
            y: [-30.0, 30.0],
            z: [5.0, 5.0],
            yaw: [-45.0, 45.0],
        }],
        stages: vec![SubgoalStage::Reach { object: "handle".into(), align_yaw: true }],
        horizon: 120,
        pos_tolerance: 4.0,
        yaw_tolerance: 3.0,
        min_separation: 0.0,
        ee_start: default_ee_start(),
        prompt: PromptContext {
            summary: "In this task, the robot must reach a handle and rotate to match its orientation.".into(),
            stages: vec!["Aligning with the Handle: Approach the handle and match its yaw.".into()],
        },
    }
}

/// The square-nut scene used by the prompt fixtures.
fn square() -> TaskSpec {
    TaskSpec {
        name: "square".into(),
        objects: vec![
            ObjectSpec {
                name: "handle".into(),
                x: [-20.0, -12.0],
                y: [9.0, 17.0],
                z: [83.0, 83.0],
                yaw: [-100.0, -90.0],
            },
            ObjectSpec::fixed("peg", [23.0, 10.0, 85.0], 0.0),
        ],
        stages: vec![
            SubgoalStage::Reach { object: "handle".into(), align_yaw: false },
            SubgoalStage::Grasp { object: "handle".into() },
            SubgoalStage::Transport { target: "peg".into() },
            SubgoalStage::Release,
        ],
        horizon: 150,
        pos_tolerance: 4.0,
        yaw_tolerance: 3.0,
        min_separation: 0.0,
        ee_start: [-7.0, 7.0, 97.0],
        prompt: PromptContext {
            summary: "In this task, the robot must pick a square nut and place it on a rod. The nut has a handle to be grasped.".into(),
            stages: vec![
                "Grasping the Handle: Approach the square nut's handle.".into(),
                "Peg Insertion: Lift the nut and get closer to the peg.".into(),
            ],
        },
    }
}

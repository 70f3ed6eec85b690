use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::task::{ResolvedStage, TaskSpec};
use crate::error::{CoreError, Result};
use crate::types::{validate_action, Action, ObjectPose, Observation, GRIP_CLOSED, GRIP_OPEN};

/// Scaled (observation) units per physical unit: centimetres per metre.
pub const SCALE: f64 = 100.0;
/// Physical displacement of a full-scale (100) action component.
pub const ACTION_SCALE: f64 = 0.2;
/// Workspace box, physical units.
pub const WORKSPACE_MIN: [f64; 3] = [-0.6, -0.6, 0.0];
pub const WORKSPACE_MAX: [f64; 3] = [0.6, 0.6, 1.2];

/// Position change in centimetres per action unit.
pub const CM_PER_UNIT: f64 = ACTION_SCALE * SCALE / 100.0;
/// Rotation in degrees per action unit.
pub const DEG_PER_UNIT: f64 = ACTION_SCALE / 100.0 * 180.0 / PI;

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectState {
    /// Physical units.
    pub pos: [f64; 3],
    /// Radians.
    pub ang: [f64; 3],
}

/// Complete simulator state. Positions are physical units, angles radians.
#[derive(Debug, Clone, PartialEq)]
pub struct WorldState {
    pub ee_pos: [f64; 3],
    pub ee_ang: [f64; 3],
    pub gripper: i32,
    pub objects: Vec<ObjectState>,
    pub held: Option<usize>,
    pub stage: usize,
    pub steps: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub state: WorldState,
    pub obs: Observation,
    pub done: bool,
    pub success: bool,
}

/// What the robot should be doing right now, derived from the stage and the
/// scene. Shared by the scripted expert, the scripted user and the oracle.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Intent {
    Reach { object: usize, align_yaw: bool },
    Grasp { object: usize },
    Carry { object: usize, target: usize },
    Release { object: usize, target: usize },
}

impl Intent {
    /// The object whose position is the subgoal point.
    pub fn goal_object(&self) -> usize {
        match *self {
            Self::Reach { object, .. } | Self::Grasp { object } => object,
            Self::Carry { target, .. } | Self::Release { target, .. } => target,
        }
    }

    pub fn object(&self) -> usize {
        match *self {
            Self::Reach { object, .. }
            | Self::Grasp { object }
            | Self::Carry { object, .. }
            | Self::Release { object, .. } => object,
        }
    }
}

/// Geometry-only view of a scene in scaled units (centimetres, degrees),
/// built either from exact world state or from a rounded observation.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneView {
    pub ee: [f64; 3],
    pub ee_yaw: f64,
    pub gripper: i32,
    pub objects: Vec<([f64; 3], f64)>,
    pub held: Option<usize>,
    pub stage: usize,
}

pub fn distance(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// Signed smallest difference `to - from` between two angles in degrees.
pub fn yaw_error_deg(from: f64, to: f64) -> f64 {
    let mut d = (to - from) % 360.0;
    if d > 180.0 {
        d -= 360.0;
    } else if d <= -180.0 {
        d += 360.0;
    }
    d
}

fn wrap_rad(a: f64) -> f64 {
    let mut r = a % (2.0 * PI);
    if r > PI {
        r -= 2.0 * PI;
    } else if r <= -PI {
        r += 2.0 * PI;
    }
    r
}

impl SceneView {
    pub fn from_world(w: &WorldState) -> Self {
        Self {
            ee: w.ee_pos.map(|v| v * SCALE),
            ee_yaw: w.ee_ang[2].to_degrees(),
            gripper: w.gripper,
            objects: w.objects.iter().map(|o| (o.pos.map(|v| v * SCALE), o.ang[2].to_degrees())).collect(),
            held: w.held,
            stage: w.stage,
        }
    }

    /// Rebuilds a view from an observation. An object counts as held when
    /// the gripper is closed and the object sits exactly at the end-effector
    /// (held objects share the end-effector's coordinates before rounding).
    /// `stage` falls back to `fallback_stage` when the observation has no hint.
    pub fn from_observation(obs: &Observation, fallback_stage: usize) -> Self {
        let objects: Vec<([f64; 3], f64)> = obs
            .objects
            .iter()
            .map(|o| (o.position.map(f64::from), f64::from(o.angles[2])))
            .collect();
        let held = if obs.gripper_state == GRIP_CLOSED {
            obs.objects.iter().position(|o| o.position == obs.ee_position)
        } else {
            None
        };
        Self {
            ee: obs.ee_position.map(f64::from),
            ee_yaw: f64::from(obs.ee_angles[2]),
            gripper: obs.gripper_state,
            objects,
            held,
            stage: obs.stage_hint.unwrap_or(fallback_stage),
        }
    }

    pub fn dist_ee(&self, object: usize) -> f64 {
        distance(&self.ee, &self.objects[object].0)
    }

    pub fn dist_objects(&self, a: usize, b: usize) -> f64 {
        distance(&self.objects[a].0, &self.objects[b].0)
    }

    pub fn stage_complete(&self, stage: &ResolvedStage, task: &TaskSpec) -> bool {
        let tol = task.pos_tolerance;
        match *stage {
            ResolvedStage::Reach { object, align_yaw } => {
                self.dist_ee(object) <= tol
                    && (!align_yaw || yaw_error_deg(self.ee_yaw, self.objects[object].1).abs() <= task.yaw_tolerance)
            }
            ResolvedStage::Grasp { object } => self.held == Some(object),
            // Letting go inside the target region also places the object.
            ResolvedStage::Transport { object, target } => {
                let released = self.held.is_none() && self.gripper == GRIP_OPEN;
                (self.held == Some(object) || released) && self.dist_objects(object, target) <= tol
            }
            ResolvedStage::Release { object, target } => {
                self.held.is_none() && self.gripper == GRIP_OPEN && self.dist_objects(object, target) <= tol
            }
        }
    }

    /// Current intent, or `None` once every stage is complete.
    pub fn intent(&self, stages: &[ResolvedStage], task: &TaskSpec) -> Option<Intent> {
        let tol = task.pos_tolerance;
        let stage = *stages.get(self.stage)?;
        let near = |object: usize| self.dist_ee(object) <= tol;
        Some(match stage {
            ResolvedStage::Reach { object, align_yaw } => Intent::Reach { object, align_yaw },
            ResolvedStage::Grasp { object } => {
                if near(object) {
                    Intent::Grasp { object }
                } else {
                    Intent::Reach { object, align_yaw: false }
                }
            }
            ResolvedStage::Transport { object, target } => {
                if self.held == Some(object) {
                    Intent::Carry { object, target }
                } else if near(object) {
                    Intent::Grasp { object }
                } else {
                    Intent::Reach { object, align_yaw: false }
                }
            }
            ResolvedStage::Release { object, target } => {
                let placed = self.dist_objects(object, target) <= tol;
                if self.held == Some(object) {
                    if placed {
                        Intent::Release { object, target }
                    } else {
                        Intent::Carry { object, target }
                    }
                } else if placed {
                    Intent::Release { object, target }
                } else if near(object) {
                    Intent::Grasp { object }
                } else {
                    Intent::Reach { object, align_yaw: false }
                }
            }
        })
    }

    /// Error from the controlled point to the intent's subgoal:
    /// `[dx, dy, dz]` in centimetres and the yaw error in degrees (zero
    /// unless the intent aligns yaw).
    pub fn subgoal_error(&self, intent: &Intent) -> ([f64; 3], f64) {
        let goal = self.objects[intent.goal_object()].0;
        let from = match intent {
            Intent::Carry { object, .. } | Intent::Release { object, .. } => self.objects[*object].0,
            _ => self.ee,
        };
        let e = [goal[0] - from[0], goal[1] - from[1], goal[2] - from[2]];
        let yaw = match intent {
            Intent::Reach { object, align_yaw: true } => yaw_error_deg(self.ee_yaw, self.objects[*object].1),
            _ => 0.0,
        };
        (e, yaw)
    }

    /// Scalar distance to the subgoal in scaled units.
    pub fn subgoal_distance(&self, intent: &Intent) -> f64 {
        let (e, yaw) = self.subgoal_error(intent);
        (e[0] * e[0] + e[1] * e[1] + e[2] * e[2] + yaw * yaw).sqrt()
    }
}

/// Deterministic kinematic pick-and-place simulator for one task.
#[derive(Debug, Clone)]
pub struct Env {
    task: TaskSpec,
    stages: Vec<ResolvedStage>,
    graspable: Vec<usize>,
}

impl Env {
    pub fn new(task: TaskSpec) -> Result<Self> {
        task.validate()?;
        let stages = task.resolve_stages()?;
        let graspable = task.graspable();
        Ok(Self { task, stages, graspable })
    }

    pub fn builtin(name: &str) -> Result<Self> {
        Self::new(TaskSpec::builtin(name)?)
    }

    pub fn task(&self) -> &TaskSpec {
        &self.task
    }

    pub fn stages(&self) -> &[ResolvedStage] {
        &self.stages
    }

    /// Samples a fresh scene; identical seeds give identical scenes.
    pub fn reset(&self, seed: u64) -> (WorldState, Observation) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sample = |r: [f64; 2], rng: &mut ChaCha8Rng| if r[0] == r[1] { r[0] } else { rng.gen_range(r[0]..=r[1]) };
        let mut placed: Vec<[f64; 3]> = Vec::with_capacity(self.task.objects.len());
        let mut objects = Vec::with_capacity(self.task.objects.len());
        for spec in &self.task.objects {
            let mut pos = [0.0; 3];
            let mut yaw = 0.0;
            for _ in 0..1000 {
                pos = [sample(spec.x, &mut rng), sample(spec.y, &mut rng), sample(spec.z, &mut rng)];
                yaw = sample(spec.yaw, &mut rng);
                let clear = placed
                    .iter()
                    .all(|p| ((p[0] - pos[0]).powi(2) + (p[1] - pos[1]).powi(2)).sqrt() >= self.task.min_separation);
                if clear {
                    break;
                }
            }
            placed.push(pos);
            objects.push(ObjectState { pos: pos.map(|v| v / SCALE), ang: [0.0, 0.0, yaw.to_radians()] });
        }
        let state = WorldState {
            ee_pos: self.task.ee_start.map(|v| v / SCALE),
            ee_ang: [0.0; 3],
            gripper: GRIP_OPEN,
            objects,
            held: None,
            stage: 0,
            steps: 0,
        };
        let obs = self.observe(&state);
        (state, obs)
    }

    pub fn observe(&self, s: &WorldState) -> Observation {
        let round = |v: f64| v.round() as i32;
        Observation {
            ee_position: s.ee_pos.map(|v| round(v * SCALE)),
            ee_angles: s.ee_ang.map(|v| round(v.to_degrees())),
            gripper_state: s.gripper,
            objects: self
                .task
                .objects
                .iter()
                .zip(&s.objects)
                .map(|(spec, o)| ObjectPose {
                    name: spec.name.clone(),
                    position: o.pos.map(|v| round(v * SCALE)),
                    angles: o.ang.map(|v| round(v.to_degrees())),
                })
                .collect(),
            stage_hint: Some(s.stage),
        }
    }

    pub fn is_success(&self, s: &WorldState) -> bool {
        s.stage >= self.stages.len()
    }

    pub fn is_done(&self, s: &WorldState) -> bool {
        self.is_success(s) || s.steps >= self.task.horizon
    }

    /// Applies one action. Each motion component moves the end-effector by
    /// `component / 100 * 0.2` physical units (radians for rotations).
    pub fn step(&self, s: &WorldState, a: &Action) -> Result<StepResult> {
        validate_action(a).map_err(|v| CoreError::Parameter(format!("invalid action {a}: {v}")))?;
        let mut n = s.clone();
        for i in 0..3 {
            let d = f64::from(a.motion[i]) / 100.0 * ACTION_SCALE;
            n.ee_pos[i] = (n.ee_pos[i] + d).clamp(WORKSPACE_MIN[i], WORKSPACE_MAX[i]);
            let r = f64::from(a.motion[3 + i]) / 100.0 * ACTION_SCALE;
            n.ee_ang[i] = wrap_rad(n.ee_ang[i] + r);
        }
        if let Some(h) = n.held {
            n.objects[h].pos = n.ee_pos;
        }
        if a.grip == GRIP_CLOSED && s.gripper == GRIP_OPEN && n.held.is_none() {
            let tol = self.task.pos_tolerance / SCALE;
            let nearest = self
                .graspable
                .iter()
                .map(|&i| (i, distance(&n.ee_pos, &n.objects[i].pos)))
                .filter(|(_, d)| *d <= tol)
                .min_by(|x, y| x.1.total_cmp(&y.1));
            if let Some((i, _)) = nearest {
                n.held = Some(i);
                n.objects[i].pos = n.ee_pos;
            }
        } else if a.grip == GRIP_OPEN {
            n.held = None;
        }
        n.gripper = a.grip;
        n.steps += 1;
        let view = SceneView::from_world(&n);
        let mut view_stage = n.stage;
        while view_stage < self.stages.len() {
            let v = SceneView { stage: view_stage, ..view.clone() };
            if v.stage_complete(&self.stages[view_stage], &self.task) {
                view_stage += 1;
            } else {
                break;
            }
        }
        n.stage = view_stage;
        let obs = self.observe(&n);
        let success = self.is_success(&n);
        let done = self.is_done(&n);
        Ok(StepResult { state: n, obs, done, success })
    }

    pub fn view(&self, s: &WorldState) -> SceneView {
        SceneView::from_world(s)
    }

    pub fn intent(&self, s: &WorldState) -> Option<Intent> {
        SceneView::from_world(s).intent(&self.stages, &self.task)
    }

    pub fn object_name(&self, i: usize) -> &str {
        &self.task.objects[i].name
    }
}

//! Per-step feature rows built from observations alone.

use serde::{Deserialize, Serialize};

use crate::env::{Env, ResolvedStage, SceneView};
use crate::types::{Observation, GRIP_CLOSED};

/// What the feature extractor needs to know about the task. Stored in
/// checkpoints so a policy can be rebuilt without the task definition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub n_objects: usize,
    /// Objects to approach, in task order.
    pub approach_order: Vec<usize>,
    /// Where each object has to be carried, if anywhere.
    pub transport_target: Vec<Option<usize>>,
    /// Distance under which an object counts as placed, in centimetres.
    pub pos_tolerance: f64,
    /// When set, append a one-hot of the observation's stage hint with this
    /// many stages (plus one slot for "done").
    pub stage_hint: Option<usize>,
}

impl FeatureSpec {
    pub fn for_env(env: &Env, use_stage_hint: bool) -> Self {
        let n_objects = env.task().objects.len();
        let mut approach_order = Vec::new();
        let mut transport_target = vec![None; n_objects];
        for stage in env.stages() {
            match *stage {
                ResolvedStage::Reach { object, .. } | ResolvedStage::Grasp { object } => {
                    if !approach_order.contains(&object) {
                        approach_order.push(object);
                    }
                }
                ResolvedStage::Transport { object, target } | ResolvedStage::Release { object, target } => {
                    transport_target[object] = Some(target);
                }
            }
        }
        Self {
            n_objects,
            approach_order,
            transport_target,
            pos_tolerance: env.task().pos_tolerance,
            stage_hint: use_stage_hint.then_some(env.stages().len()),
        }
    }

    /// Length of one feature row.
    pub fn width(&self) -> usize {
        // ee pose, gripper, object poses, ee-to-target vector, previous action.
        6 + 1 + 6 * self.n_objects + 3 + 7 + self.stage_hint.map_or(0, |n| n + 1)
    }

    /// Vector from the controlled point to the current target, inferred from
    /// the observation without its stage hint: carry a held object to its
    /// target, otherwise head for the first object not yet placed.
    pub fn target_vector(&self, obs: &Observation) -> [f64; 3] {
        let view = SceneView::from_observation(&Observation { stage_hint: None, ..obs.clone() }, 0);
        let diff = |to: [f64; 3], from: [f64; 3]| [to[0] - from[0], to[1] - from[1], to[2] - from[2]];
        if let Some(h) = view.held.filter(|_| obs.gripper_state == GRIP_CLOSED) {
            if let Some(target) = self.transport_target.get(h).copied().flatten() {
                return diff(view.objects[target].0, view.objects[h].0);
            }
        }
        let placed = |o: usize| {
            self.transport_target
                .get(o)
                .copied()
                .flatten()
                .is_some_and(|t| view.dist_objects(o, t) <= self.pos_tolerance)
        };
        match self.approach_order.iter().find(|&&o| !placed(o)) {
            Some(&o) => diff(view.objects[o].0, view.ee),
            None => [0.0; 3],
        }
    }

    /// Raw (unnormalized) feature row for `obs` reached after `prev_action`.
    pub fn row(&self, obs: &Observation, prev_action: &[i32; 7]) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.width());
        v.extend(obs.ee_position.iter().chain(&obs.ee_angles).map(|&x| f64::from(x)));
        v.push(f64::from(obs.gripper_state) / 100.0);
        for o in obs.objects.iter().take(self.n_objects) {
            v.extend(o.position.iter().chain(&o.angles).map(|&x| f64::from(x)));
        }
        v.extend(self.target_vector(obs));
        v.extend(prev_action.iter().map(|&a| f64::from(a) / 100.0));
        if let Some(n) = self.stage_hint {
            let mut onehot = vec![0.0; n + 1];
            onehot[obs.stage_hint.unwrap_or(n).min(n)] = 1.0;
            v.extend(onehot);
        }
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::NO_ACTION;

    #[test]
    fn row_width_matches_spec() {
        let env = Env::builtin("pickplace").unwrap();
        let spec = FeatureSpec::for_env(&env, false);
        let (_, obs) = env.reset(0);
        assert_eq!(spec.row(&obs, &NO_ACTION).len(), spec.width());
        assert_eq!(spec.width(), 29);
        let hinted = FeatureSpec::for_env(&env, true);
        assert_eq!(hinted.row(&obs, &NO_ACTION).len(), hinted.width());
    }

    #[test]
    fn target_follows_task_progress() {
        let env = Env::builtin("pickplace").unwrap();
        let spec = FeatureSpec::for_env(&env, false);
        let (mut s, obs) = env.reset(3);
        let o = &obs.objects[0].position;
        let e = &obs.ee_position;
        assert_eq!(spec.target_vector(&obs), [0, 1, 2].map(|i| f64::from(o[i] - e[i])));
        // Carrying: the target becomes the bin.
        s.ee_pos = s.objects[0].pos;
        s.held = Some(0);
        s.gripper = GRIP_CLOSED;
        let obs = env.observe(&s);
        let (c, b) = (&obs.objects[0].position, &obs.objects[1].position);
        assert_eq!(spec.target_vector(&obs), [0, 1, 2].map(|i| f64::from(b[i] - c[i])));
    }

    #[test]
    fn stage_hint_is_ignored_unless_enabled() {
        let env = Env::builtin("pickplace").unwrap();
        let spec = FeatureSpec::for_env(&env, false);
        let (_, mut obs) = env.reset(1);
        let a = spec.row(&obs, &NO_ACTION);
        obs.stage_hint = Some(2);
        assert_eq!(spec.row(&obs, &NO_ACTION), a);
    }
}

use super::world::{Env, Intent, SceneView, WorldState, CM_PER_UNIT, DEG_PER_UNIT};
use super::Controller;
use crate::types::{Action, Observation, GRIP_CLOSED, GRIP_OPEN};

/// Default per-step magnitude of expert motions, in action units.
pub const DEFAULT_EXPERT_MAGNITUDE: i32 = 20;

/// Greedy stage-following demonstrator: moves a fixed magnitude along the
/// axis with the largest remaining error and issues the gripper command the
/// current stage needs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScriptedExpert {
    pub magnitude: i32,
}

impl Default for ScriptedExpert {
    fn default() -> Self {
        Self { magnitude: DEFAULT_EXPERT_MAGNITUDE }
    }
}

impl ScriptedExpert {
    pub fn new(magnitude: i32) -> Self {
        Self { magnitude }
    }

    pub fn act(&self, env: &Env, s: &WorldState) -> Action {
        let view = SceneView::from_world(s);
        match view.intent(env.stages(), env.task()) {
            Some(intent) => self.act_on(&view, &intent),
            None => Action::hold(s.gripper),
        }
    }

    pub fn act_on(&self, view: &SceneView, intent: &Intent) -> Action {
        match *intent {
            Intent::Reach { .. } => self.step_toward(view, intent, GRIP_OPEN),
            Intent::Grasp { .. } => {
                // Grasping needs an open-to-closed transition.
                if view.gripper == GRIP_CLOSED {
                    Action::hold(GRIP_OPEN)
                } else {
                    Action::hold(GRIP_CLOSED)
                }
            }
            Intent::Carry { .. } => self.step_toward(view, intent, GRIP_CLOSED),
            Intent::Release { .. } => Action::hold(GRIP_OPEN),
        }
    }

    fn step_toward(&self, view: &SceneView, intent: &Intent, grip: i32) -> Action {
        let (e, yaw) = view.subgoal_error(intent);
        let m = f64::from(self.magnitude);
        let half_pos = CM_PER_UNIT * m / 2.0;
        let half_yaw = DEG_PER_UNIT * m / 2.0;
        let axes = [(0, e[0], half_pos), (1, e[1], half_pos), (2, e[2], half_pos), (5, yaw, half_yaw)];
        let best = axes
            .iter()
            .filter(|(_, err, half)| err.abs() > *half)
            .fold(None::<(usize, f64)>, |acc, &(i, err, _)| match acc {
                Some((_, b)) if b.abs() >= err.abs() => acc,
                _ => Some((i, err)),
            });
        let mut a = Action::hold(grip);
        if let Some((axis, err)) = best {
            a.motion[axis] = if err > 0.0 { self.magnitude } else { -self.magnitude };
        }
        a
    }
}

impl Controller for ScriptedExpert {
    fn act(&mut self, env: &Env, state: &WorldState, _obs: &Observation) -> Action {
        ScriptedExpert::act(self, env, state)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::rollout::{rollout, RolloutConfig};

    #[test]
    fn reach_moves_toward_object_with_open_gripper() {
        let env = Env::builtin("reach").unwrap();
        let (mut s, _) = env.reset(0);
        // Put the can straight to the right of the end-effector (+y).
        s.objects[0].pos = [s.ee_pos[0], s.ee_pos[1] + 0.3, s.ee_pos[2]];
        let a = ScriptedExpert::default().act(&env, &s);
        assert_eq!(a, Action::new(0, 20, 0, 0, 0, 0, GRIP_OPEN));
    }

    #[test]
    fn grasp_stage_closes_when_near() {
        let env = Env::builtin("pickplace").unwrap();
        let (mut s, _) = env.reset(0);
        s.ee_pos = s.objects[0].pos;
        s.ee_pos[0] += 0.01;
        s.stage = 1;
        assert_eq!(ScriptedExpert::default().act(&env, &s), Action::hold(GRIP_CLOSED));
    }

    #[test]
    fn expert_solves_seed_zero_within_horizon() {
        for task in ["reach", "pickplace", "pickplace-two", "align-yaw"] {
            let env = Env::builtin(task).unwrap();
            let traj = rollout(&env, 0, &mut ScriptedExpert::default(), None, &RolloutConfig::default()).unwrap();
            assert!(traj.success, "{task}");
            assert!(traj.horizon() < env.task().horizon, "{task}");
        }
    }

    #[test]
    fn expert_recovers_after_drop() {
        let env = Env::builtin("pickplace").unwrap();
        let expert = ScriptedExpert::default();
        let (mut s, _) = env.reset(5);
        // Run until carrying, then drop the can midway.
        while s.stage < 2 {
            s = env.step(&s, &expert.act(&env, &s)).unwrap().state;
        }
        s = env.step(&s, &Action::new(0, 0, 20, 0, 0, 0, GRIP_OPEN)).unwrap().state;
        assert_eq!(s.held, None);
        while !env.is_done(&s) {
            s = env.step(&s, &expert.act(&env, &s)).unwrap().state;
        }
        assert!(env.is_success(&s));
    }
}

//! Scripted stand-in for the human watcher: detects stalls and gripper
//! mistakes, waits a reaction delay, then stops the robot with a templated
//! correction and optionally takes over with the scripted expert.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::world::{Env, Intent, SceneView, WorldState};
use crate::language::{long_text, short_text, Complaint, Direction};
use crate::types::{Action, FeedbackStyle, GRIP_CLOSED, GRIP_OPEN};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserConfig {
    /// Consecutive steps without progress before a stall is noticed (D).
    pub patience: usize,
    /// Inclusive range of the reaction delay between noticing and stopping.
    pub reaction_delay: [usize; 2],
    /// A step counts as progress when it beats the best distance so far in
    /// the current subgoal by at least this much (centimetres).
    pub min_progress: f64,
    pub style: FeedbackStyle,
    /// Probability that a stop is followed by an expert takeover.
    pub intervene_prob: f64,
    /// Expert steps allowed in one intervention before control returns.
    pub max_intervention: usize,
}

impl Default for UserConfig {
    fn default() -> Self {
        Self {
            patience: 6,
            reaction_delay: [8, 15],
            min_progress: 0.5,
            style: FeedbackStyle::Long,
            intervene_prob: 0.0,
            max_intervention: 60,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum UserEvent {
    Continue,
    Stop { text: String, style: FeedbackStyle },
    StopAndIntervene { text: String, style: FeedbackStyle },
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Mistake {
    Stall,
    Dropped { target: usize },
    ClosedEarly { object: usize },
}

#[derive(Debug, Clone)]
pub struct ScriptedUser {
    cfg: UserConfig,
    rng: ChaCha8Rng,
    /// (stage, goal object) the progress tracker refers to.
    tracking: Option<(usize, usize)>,
    best: f64,
    idle: usize,
    pending: Option<(usize, Mistake)>,
    stopped: bool,
}

impl ScriptedUser {
    pub fn new(cfg: UserConfig, seed: u64) -> Self {
        Self {
            cfg,
            rng: ChaCha8Rng::seed_from_u64(seed ^ 0x005e_ed0f_05e4),
            tracking: None,
            best: f64::INFINITY,
            idle: 0,
            pending: None,
            stopped: false,
        }
    }

    pub fn config(&self) -> &UserConfig {
        &self.cfg
    }

    pub fn has_stopped(&self) -> bool {
        self.stopped
    }

    /// Updates detection state after an executed step at time `t`.
    pub fn observe(&mut self, env: &Env, before: &WorldState, action: &Action, after: &WorldState, t: usize) {
        if self.stopped || env.is_success(after) {
            return;
        }
        let mistake = if before.held.is_some() && after.held.is_none() && after.stage == before.stage {
            let target = match env.stages().get(after.stage) {
                Some(super::task::ResolvedStage::Transport { target, .. })
                | Some(super::task::ResolvedStage::Release { target, .. }) => Some(*target),
                _ => None,
            };
            target.map(|target| Mistake::Dropped { target })
        } else if action.grip == GRIP_CLOSED && before.gripper == GRIP_OPEN && after.held.is_none() {
            env.intent(after).map(|i| Mistake::ClosedEarly { object: i.object() })
        } else {
            None
        };
        if mistake.is_none() {
            let view = SceneView::from_world(after);
            if let Some(intent) = view.intent(env.stages(), env.task()) {
                let key = (after.stage, intent.goal_object());
                let d = view.subgoal_distance(&intent);
                if self.tracking != Some(key) {
                    self.tracking = Some(key);
                    self.best = d;
                    self.idle = 0;
                } else if d < self.best - self.cfg.min_progress {
                    self.best = d;
                    self.idle = 0;
                } else {
                    self.idle += 1;
                }
            }
        }
        let noticed = mistake.or((self.idle >= self.cfg.patience).then_some(Mistake::Stall));
        if let (None, Some(m)) = (self.pending, noticed) {
            let [lo, hi] = self.cfg.reaction_delay;
            let delay = self.rng.gen_range(lo..=hi);
            self.pending = Some((t + 1 + delay, m));
        }
    }

    /// Decides, before the policy's next action executes at time `t`,
    /// whether to stop the robot.
    pub fn decide(&mut self, env: &Env, state: &WorldState, t: usize, _policy_action: &Action) -> UserEvent {
        if self.stopped {
            return UserEvent::Continue;
        }
        let Some((fire_at, mistake)) = self.pending else {
            return UserEvent::Continue;
        };
        if t < fire_at {
            return UserEvent::Continue;
        }
        self.stopped = true;
        let intervene = self.rng.gen_bool(self.cfg.intervene_prob.clamp(0.0, 1.0));
        let style = self.cfg.style;
        let text = match complaint(env, state, mistake) {
            Some(c) => match style {
                FeedbackStyle::Long => long_text(&c),
                FeedbackStyle::Short => short_text(&c),
                FeedbackStyle::None => String::new(),
            },
            None => String::new(),
        };
        let style = if text.is_empty() { FeedbackStyle::None } else { style };
        if intervene {
            UserEvent::StopAndIntervene { text, style }
        } else {
            UserEvent::Stop { text, style }
        }
    }
}

/// Direction of the largest position (and, for aligned reaches, yaw) error.
fn direction_of(view: &SceneView, intent: &Intent, with_yaw: bool) -> Direction {
    let (e, yaw) = view.subgoal_error(intent);
    let mut best = (0usize, e[0]);
    for (i, v) in [(1usize, e[1]), (2, e[2])] {
        if v.abs() > best.1.abs() {
            best = (i, v);
        }
    }
    if with_yaw && yaw.abs() > best.1.abs() {
        best = (5, yaw);
    }
    Direction::from_axis(best.0, best.1 >= 0.0).unwrap_or(Direction::Forward)
}

fn complaint(env: &Env, state: &WorldState, mistake: Mistake) -> Option<Complaint> {
    let view = SceneView::from_world(state);
    let name = |i: usize| env.object_name(i).to_string();
    match mistake {
        Mistake::Dropped { target } => {
            let object = env.stages().get(state.stage).map(|s| s.object()).unwrap_or(0);
            // Point from where the object was let go to its target.
            let aim = Intent::Carry { object, target };
            Some(Complaint::Dropped { target: name(target), direction: direction_of(&view, &aim, false) })
        }
        Mistake::ClosedEarly { object } => {
            let reach = Intent::Reach { object, align_yaw: false };
            Some(Complaint::ClosedEarly { object: name(object), direction: direction_of(&view, &reach, false) })
        }
        Mistake::Stall => {
            let intent = view.intent(env.stages(), env.task())?;
            Some(match intent {
                Intent::Reach { object, align_yaw } => {
                    Complaint::Reach { object: name(object), direction: direction_of(&view, &intent, align_yaw) }
                }
                Intent::Grasp { object } => Complaint::Grasp { object: name(object) },
                Intent::Carry { target, .. } => {
                    Complaint::Aim { target: name(target), direction: direction_of(&view, &intent, false) }
                }
                Intent::Release { object, .. } => Complaint::Release { object: name(object) },
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::expert::ScriptedExpert;
    use crate::env::rollout::{rollout, RolloutConfig};
    use crate::env::Controller;
    use crate::types::Observation;

    /// Replays a fixed action forever.
    struct Constant(Action);
    impl Controller for Constant {
        fn act(&mut self, _: &Env, _: &WorldState, _: &Observation) -> Action {
            self.0
        }
    }

    #[test]
    fn drifting_right_while_object_left_gets_left_correction() {
        // Start level with the can so the horizontal error dominates.
        let mut task = crate::env::TaskSpec::builtin("reach").unwrap();
        task.ee_start = [0.0, 0.0, 5.0];
        let env = Env::new(task).unwrap();
        // Find a seed where the can is clearly to the left (-y) and y dominates.
        let seed = (0..500)
            .find(|&s| {
                let (w, _) = env.reset(s);
                let v = SceneView::from_world(&w);
                let (e, _) = v.subgoal_error(&Intent::Reach { object: 0, align_yaw: false });
                e[1] < -20.0 && e[1].abs() > e[0].abs() && e[1].abs() > e[2].abs()
            })
            .unwrap();
        let mut user = ScriptedUser::new(UserConfig::default(), 1);
        let traj = rollout(
            &env,
            seed,
            &mut Constant(Action::new(0, 20, 0, 0, 0, 0, GRIP_OPEN)),
            Some(&mut user),
            &RolloutConfig::default(),
        )
        .unwrap();
        let c = traj.correction.expect("stopped");
        assert_eq!(c.text, "Stop. You should move to your left to reach the can.");
        let t = traj.stop_index.unwrap();
        // Stall noticed after D idle steps, then an 8..=15 step delay.
        assert!((6 + 8..=6 + 15 + 2).contains(&t), "stop at {t}");
    }

    #[test]
    fn release_mid_transport_is_a_gripper_mistake() {
        let env = Env::builtin("pickplace").unwrap();
        let expert = ScriptedExpert::default();
        // Expert until carrying, then open the gripper while moving away.
        struct DropAfterGrasp(ScriptedExpert, bool);
        impl Controller for DropAfterGrasp {
            fn act(&mut self, env: &Env, s: &WorldState, _: &Observation) -> Action {
                if s.stage == 2 && s.held.is_some() && !self.1 {
                    self.1 = true;
                    return Action::new(0, 0, 0, 0, 0, 0, GRIP_OPEN);
                }
                if self.1 {
                    return Action::new(-20, 0, 0, 0, 0, 0, GRIP_OPEN);
                }
                self.0.act(env, s)
            }
        }
        let seed = (0..200)
            .find(|&s| {
                let (w, _) = env.reset(s);
                w.objects[1].pos[0] > w.objects[0].pos[0] + 0.3
            })
            .unwrap();
        let mut user = ScriptedUser::new(UserConfig::default(), 3);
        let traj = rollout(&env, seed, &mut DropAfterGrasp(expert, false), Some(&mut user), &RolloutConfig::default())
            .unwrap();
        let text = traj.correction.unwrap().text;
        assert!(text.starts_with("You should not release! And you should move "), "{text}");
        assert!(text.ends_with("to aim at the bin."), "{text}");
    }

    #[test]
    fn expert_is_never_stopped() {
        for task in ["reach", "pickplace", "pickplace-two", "align-yaw"] {
            let env = Env::builtin(task).unwrap();
            for seed in 0..25 {
                let mut user = ScriptedUser::new(UserConfig::default(), seed);
                let traj =
                    rollout(&env, seed, &mut ScriptedExpert::default(), Some(&mut user), &RolloutConfig::default())
                        .unwrap();
                assert!(traj.stop_index.is_none(), "{task} seed {seed}");
                assert!(traj.success);
            }
        }
    }

    #[test]
    fn short_style_has_no_direction_words() {
        let env = Env::builtin("reach").unwrap();
        let cfg = UserConfig { style: FeedbackStyle::Short, ..UserConfig::default() };
        let mut user = ScriptedUser::new(cfg, 1);
        let traj = rollout(&env, 2, &mut Constant(Action::hold(GRIP_OPEN)), Some(&mut user), &RolloutConfig::default())
            .unwrap();
        assert_eq!(traj.correction.unwrap().text, "Move closer to the can.");
    }
}

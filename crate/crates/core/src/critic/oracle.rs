//! Deterministic critic that reads corrections through the template
//! grammar and scores candidates geometrically. It stands in for a language
//! model in offline experiments and tests.

use super::{Answer, Critic, CriticQuery};
use crate::env::world::{CM_PER_UNIT, DEG_PER_UNIT};
use crate::env::{Intent, SceneView};
use crate::error::{CoreError, Result};
use crate::language::{self, GripDirective};
use crate::proposal::{propose, CandidateSet, Choice, ProposalMethod};
use crate::types::Action;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct OracleCritic;

/// What a candidate is scored against.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Objective {
    /// Ground-truth subgoal of the current stage.
    Subgoal(Intent),
    /// Distance from the end-effector to a named object.
    Object(usize),
}

/// The view after applying `a`'s motion (a held object moves with the
/// end-effector).
pub fn view_after(view: &SceneView, a: &Action) -> SceneView {
    let mut v = view.clone();
    for i in 0..3 {
        v.ee[i] += f64::from(a.motion[i]) * CM_PER_UNIT;
    }
    v.ee_yaw += f64::from(a.motion[5]) * DEG_PER_UNIT;
    if let Some(h) = v.held {
        v.objects[h].0 = v.ee;
    }
    v
}

fn score(view: &SceneView, objective: Objective, a: &Action) -> f64 {
    let after = view_after(view, a);
    match objective {
        Objective::Subgoal(intent) => after.subgoal_distance(&intent),
        Objective::Object(i) => after.dist_ee(i),
    }
}

/// Index of the lowest-scoring candidate among `allowed`; ties go to the
/// lowest index.
fn argmin(view: &SceneView, objective: Objective, candidates: &[Action], allowed: &[usize]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for &i in allowed {
        let s = score(view, objective, &candidates[i]);
        if best.is_none_or(|(_, b)| s < b) {
            best = Some((i, s));
        }
    }
    best.map(|(i, _)| i)
}

/// Whether candidate `a` moves along one of the parsed directions.
pub fn consistent(a: &Action, directions: &[language::Direction]) -> bool {
    directions.iter().any(|d| {
        let (axis, sign) = d.axis();
        a.motion[axis].signum() == sign && a.motion.iter().enumerate().all(|(j, v)| j == axis || *v == 0)
    })
}

impl OracleCritic {
    /// Reads the gripper directive of a query.
    pub fn gripper(q: &CriticQuery) -> GripDirective {
        if q.has_feedback() {
            language::parse_grip(&q.correction.text)
        } else {
            GripDirective::Unchanged
        }
    }

    /// Chooses among one-dimensional `candidates`.
    ///
    /// Directional corrections restrict the choice to candidates moving in
    /// a named direction; object-centric ones score by distance to the named
    /// object; gripper-only corrections and queries without feedback score
    /// by distance to the ground-truth subgoal.
    pub fn select_index(q: &CriticQuery, candidates: &[Action]) -> Result<usize> {
        if candidates.is_empty() {
            return Err(CoreError::Oracle("no candidates to choose from".into()));
        }
        let env = q.env;
        let view = SceneView::from_observation(q.obs, 0);
        let all: Vec<usize> = (0..candidates.len()).collect();
        let subgoal = view.intent(env.stages(), env.task()).map(Objective::Subgoal);
        if !q.has_feedback() {
            return Ok(subgoal.and_then(|o| argmin(&view, o, candidates, &all)).unwrap_or(0));
        }
        let parsed = language::parse(&q.correction.text);
        if !parsed.directions.is_empty() {
            let allowed: Vec<usize> = all.iter().copied().filter(|&i| consistent(&candidates[i], &parsed.directions)).collect();
            if !allowed.is_empty() {
                let objective = subgoal.unwrap_or(Objective::Object(0));
                return argmin(&view, objective, candidates, &allowed)
                    .ok_or_else(|| CoreError::Oracle("no candidate selected".into()));
            }
        }
        if let Some(name) = &parsed.focus {
            let i = env
                .task()
                .object_index(name)
                .ok_or_else(|| CoreError::Oracle(format!("correction names unknown object {name:?}")))?;
            return argmin(&view, Objective::Object(i), candidates, &all)
                .ok_or_else(|| CoreError::Oracle("no candidate selected".into()));
        }
        if parsed.grip != GripDirective::Unchanged {
            if let Some(o) = subgoal {
                return argmin(&view, o, candidates, &all).ok_or_else(|| CoreError::Oracle("no candidate selected".into()));
            }
        }
        Err(CoreError::Oracle(format!(
            "cannot interpret correction {:?}; a language-model backend is required",
            q.correction.text
        )))
    }
}

impl Critic for OracleCritic {
    fn id(&self) -> String {
        "oracle".to_string()
    }

    fn query_gripper(&self, q: &CriticQuery) -> Result<Answer<GripDirective>> {
        Ok(Answer::direct(Self::gripper(q)))
    }

    fn query_action(&self, q: &CriticQuery, set: &CandidateSet) -> Result<Answer<Choice>> {
        let choice = match set.method {
            ProposalMethod::Onedim | ProposalMethod::OnedimPlusOriginal => {
                Choice::Index(Self::select_index(q, &set.candidates)?)
            }
            ProposalMethod::LlmGives | ProposalMethod::LlmEdits => {
                let basis = propose(ProposalMethod::Onedim, set.original_action, set.grip, set.magnitude)?;
                let pick = basis.candidates[Self::select_index(q, &basis.candidates)?];
                let action = if set.method == ProposalMethod::LlmGives {
                    pick
                } else {
                    let mut edited = Action { grip: set.grip, ..set.original_action };
                    let axis = pick.motion.iter().position(|v| *v != 0).unwrap_or(0);
                    edited.motion[axis] = pick.motion[axis];
                    edited
                };
                Choice::Action(action.to_array())
            }
        };
        Ok(Answer::direct(choice))
    }
}

//! Checks shared by the integration tests and the acceptance report. Each
//! check returns a one-line detail on success and a reason on failure.

#![allow(dead_code)]

use std::path::PathBuf;
use std::sync::Arc;
use std::time::Instant;

use olaf_core::critic::{
    build_prompts, ChatBackend, ChatRequest, Critic, CriticQuery, LlmCritic, OracleCritic,
    ReplayBackend, ScriptedBackend, Slot,
};
use olaf_core::critic::oracle::view_after;
use olaf_core::dataset::{aggregate, assign_weights, weight_for, Source, WeightParams, WeightScheme, WeightedDataset};
use olaf_core::env::{rollout, Env, RolloutConfig, SceneView, ScriptedExpert, UserConfig};
use olaf_core::exec::Execution;
use olaf_core::language::{long_text, Complaint, Direction, GripDirective};
use olaf_core::learner::{
    train, Example, FeatureSpec, PolicyParams, TrainConfig, TrainingSet, ACTION_DIM,
};
use olaf_core::proposal::{propose, propose_with, CandidateSet, ProposalMethod};
use olaf_core::relabel::{relabel, RelabelConfig, RelabelMode};
use olaf_core::segment::DEFAULT_WINDOW;
use olaf_core::session::{
    collect_demos, pretrain, run_interaction, ArmConfig, Experiment, ExperimentConfig, ExperimentReport,
    PipelineConfig,
};
use olaf_core::types::{
    Action, Actor, FeedbackStyle, ObjectPose, Observation, SegmentLabel, Span, Step, Trajectory, VerbalCorrection,
    GRIP_CLOSED, GRIP_OPEN,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Check = Result<String, String>;

pub fn data_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests")
}

// ---------------------------------------------------------------------------
// Prompt golden files

pub const SQUARE_CORRECTION: &str =
    "You should not close the gripper now, you should move backwards to aim at the handle first.";

/// The square-nut state used by the committed prompt transcriptions.
pub fn square_observation() -> Observation {
    Observation {
        ee_position: [-7, 7, 97],
        ee_angles: [0, -5, -8],
        gripper_state: GRIP_OPEN,
        objects: vec![
            ObjectPose { name: "handle".into(), position: [-16, 13, 83], angles: [0, 0, -95] },
            ObjectPose { name: "peg".into(), position: [23, 10, 85], angles: [0, 0, 0] },
        ],
        stage_hint: Some(0),
    }
}

pub fn square_candidates() -> CandidateSet {
    propose(ProposalMethod::Onedim, Action::hold(GRIP_OPEN), GRIP_OPEN, 20).expect("valid proposal")
}

pub fn square_correction() -> VerbalCorrection {
    VerbalCorrection::new(SQUARE_CORRECTION, 0, FeedbackStyle::Long).expect("non-empty correction")
}

fn first_difference(a: &str, b: &str) -> String {
    let line = a.lines().zip(b.lines()).position(|(x, y)| x != y).unwrap_or(a.lines().count().min(b.lines().count()));
    format!("first difference at line {}", line + 1)
}

pub fn check_prompt_golden() -> Check {
    let env = Env::builtin("square").map_err(|e| e.to_string())?;
    let obs = square_observation();
    let set = square_candidates();
    let correction = square_correction();
    for (include, file) in [(true, "square_action_prompt.txt"), (false, "square_action_prompt_no_feedback.txt")] {
        let golden = std::fs::read_to_string(data_dir().join("golden").join(file)).map_err(|e| format!("{file}: {e}"))?;
        let bundle = build_prompts(env.task(), &obs, &set, &correction, include).map_err(|e| e.to_string())?;
        let again = build_prompts(env.task(), &obs, &set, &correction, include).map_err(|e| e.to_string())?;
        if bundle != again {
            return Err("prompt construction is not deterministic".into());
        }
        let rendered = bundle.action_document();
        if rendered != golden {
            return Err(format!("{file}: {}", first_difference(&rendered, &golden)));
        }
    }
    // The transcribed scenario's answer is the backwards candidate.
    let q = CriticQuery { env: &env, obs: &obs, correction: &correction, include_feedback: true, original_action: Action::hold(GRIP_OPEN) };
    let i = OracleCritic::select_index(&q, &set.candidates).map_err(|e| e.to_string())?;
    if i != 4 {
        return Err(format!("oracle picked candidate {i} for the square scenario, expected 4"));
    }
    Ok("both transcriptions byte-identical; square scenario selects candidate 4".into())
}

// ---------------------------------------------------------------------------
// Gripper examples

pub const GRIPPER_EXAMPLE_1: &str = "You should move the gripper slightly to the left to aim it at the pea can";
pub const GRIPPER_EXAMPLE_2: &str = "You should not release! And you should move backwards to aim at the bin.";

fn gripper_verdict(critic: &dyn Critic, text: &str) -> Result<GripDirective, String> {
    let env = Env::builtin("pickplace").map_err(|e| e.to_string())?;
    let (_, obs) = env.reset(0);
    let correction = VerbalCorrection::new(text, 0, FeedbackStyle::Long).map_err(|e| e.to_string())?;
    let q = CriticQuery { env: &env, obs: &obs, correction: &correction, include_feedback: true, original_action: Action::hold(GRIP_OPEN) };
    critic.query_gripper(&q).map(|a| a.value).map_err(|e| e.to_string())
}

pub fn gripper_replay_backend() -> Result<ReplayBackend, String> {
    ReplayBackend::load(data_dir().join("fixtures").join("gripper_examples.jsonl")).map_err(|e| e.to_string())
}

pub fn check_gripper_examples() -> Check {
    let replay = LlmCritic::new(gripper_replay_backend()?);
    let cases = [(GRIPPER_EXAMPLE_1, GripDirective::Unchanged), (GRIPPER_EXAMPLE_2, GripDirective::Close)];
    for (text, expected) in cases {
        for (name, critic) in [("oracle", &OracleCritic as &dyn Critic), ("replay", &replay as &dyn Critic)] {
            let got = gripper_verdict(critic, text)?;
            if got != expected {
                return Err(format!("{name} resolved {text:?} to {got:?}, expected {expected:?}"));
            }
        }
    }
    Ok("example 1 -> unchanged, example 2 -> +100 under oracle and replay".into())
}

// ---------------------------------------------------------------------------
// Summarization retry contract

const REASONING: &str = "Moving backwards decreases x, which brings the gripper over the handle.";

/// A stopped pickplace trajectory with a templated correction.
pub fn stopped_trajectory(seed: u64, horizon: usize, stop: usize) -> Trajectory {
    let env = Env::builtin("pickplace").expect("builtin task");
    let (mut state, mut obs) = env.reset(seed);
    let mut t = Trajectory::new("pickplace", seed);
    for i in 0..horizon {
        let a = Action::new(0, 0, -10, 0, 0, 0, GRIP_OPEN);
        t.steps.push(Step::new(i, obs.clone(), a, Actor::Policy));
        let r = env.step(&state, &a).expect("valid action");
        state = r.state;
        obs = r.obs;
    }
    t.final_obs = Some(obs);
    t.stop_index = Some(stop);
    t.stop_action = Some(Action::new(0, 0, -10, 0, 0, 0, GRIP_CLOSED));
    t.correction = Some(
        VerbalCorrection::new(
            long_text(&Complaint::Reach { object: "can".into(), direction: Direction::Backward }),
            stop,
            FeedbackStyle::Long,
        )
        .expect("non-empty"),
    );
    t.relabel_segments(DEFAULT_WINDOW).expect("valid segmentation");
    t
}

fn action_query_with(backend: &ScriptedBackend) -> olaf_core::Result<olaf_core::critic::Answer<olaf_core::proposal::Choice>> {
    let env = Env::builtin("square")?;
    let obs = square_observation();
    let correction = square_correction();
    let q = CriticQuery { env: &env, obs: &obs, correction: &correction, include_feedback: true, original_action: Action::hold(GRIP_OPEN) };
    LlmCritic::new(backend).query_action(&q, &square_candidates())
}

pub fn check_retry_contract() -> Check {
    // Malformed on attempts 1 and 2, valid on 3.
    let backend = ScriptedBackend::new([REASONING, "the action is 4", "{'action': 2} or {'action': 4}", "{'action': 4}"]);
    let answer = action_query_with(&backend).map_err(|e| format!("third attempt should succeed: {e}"))?;
    if answer.attempts != 3 {
        return Err(format!("reported attempts={}, expected 3", answer.attempts));
    }
    if answer.value != olaf_core::proposal::Choice::Index(4) {
        return Err(format!("parsed {:?}, expected index 4", answer.value));
    }
    let requests = backend.requests();
    let last = requests.last().ok_or("no requests recorded")?;
    // Corrective prompts extend the same conversation: system, prompt,
    // reasoning, summarize, and two (reply, corrective) pairs.
    if last.messages.len() != 8 || last.slot != Slot::Summarization {
        return Err(format!("third summarization carried {} messages, expected 8", last.messages.len()));
    }

    // Malformed three times: a relabel error and no fourth summarization.
    let backend = ScriptedBackend::new([REASONING, "no", "still no", "{'action': 99}", "{'action': 4}"]);
    match action_query_with(&backend) {
        Err(olaf_core::CoreError::Relabel(_)) => {}
        other => return Err(format!("three malformed replies gave {other:?}, expected a relabel error")),
    }
    let summaries = backend.requests().iter().filter(|r| r.slot == Slot::Summarization).count();
    if summaries != 3 || backend.remaining() != 1 {
        return Err(format!("issued {summaries} summarization queries, expected exactly 3"));
    }

    // The failing trajectory is excluded from synthesis.
    let env = Env::builtin("pickplace").map_err(|e| e.to_string())?;
    let traj = stopped_trajectory(3, 20, 16);
    let always_bad = LlmCritic::new(AlwaysMalformed);
    let arm = ArmConfig::olaf(FeedbackStyle::Long, RelabelMode::Basic, false);
    let s = olaf_core::session::synthesize(
        &env,
        &[traj],
        &arm,
        &RelabelConfig::default(),
        &always_bad,
        Execution::Sequential,
    )
    .map_err(|e| e.to_string())?;
    if s.excluded != 1 || !s.trajectories.is_empty() {
        return Err(format!("failed relabel kept {} trajectories, excluded {}", s.trajectories.len(), s.excluded));
    }
    Ok("attempts=3 on late success; 3 failures -> relabel error, no 4th query, trajectory excluded".into())
}

/// Replies to everything with text that never summarizes.
pub struct AlwaysMalformed;

impl ChatBackend for AlwaysMalformed {
    fn id(&self) -> String {
        "malformed".into()
    }

    fn complete(&self, _request: &ChatRequest) -> olaf_core::Result<String> {
        Ok("I am not sure.".into())
    }
}

// ---------------------------------------------------------------------------
// Oracle versus brute force

/// A reachable pickplace state: the expert's trajectory cut at a random
/// step, with a random end-effector offset.
fn random_state(rng: &mut ChaCha8Rng) -> (Env, Observation) {
    let env = Env::builtin("pickplace").expect("builtin task");
    let (mut s, _) = env.reset(rng.gen());
    let expert = ScriptedExpert::default();
    for _ in 0..rng.gen_range(0..40) {
        if env.is_done(&s) {
            break;
        }
        s = env.step(&s, &expert.act(&env, &s)).expect("expert action").state;
    }
    let jitter: [f64; 3] = std::array::from_fn(|_| rng.gen_range(-0.05..0.05));
    let held = s.held;
    for (p, j) in s.ee_pos.iter_mut().zip(jitter) {
        *p += j;
    }
    if let Some(h) = held {
        s.objects[h].pos = s.ee_pos;
    }
    let obs = env.observe(&s);
    (env, obs)
}

/// Directive-consistent, minimum post-action subgoal distance choice,
/// computed by applying every candidate.
fn brute_force(env: &Env, obs: &Observation, candidates: &[Action], d: Direction) -> Option<usize> {
    let view = SceneView::from_observation(obs, 0);
    let intent = view.intent(env.stages(), env.task())?;
    let (axis, sign) = d.axis();
    let mut best: Option<(usize, f64)> = None;
    for (i, c) in candidates.iter().enumerate() {
        let along_axis_only = (0..6).all(|j| if j == axis { c.motion[j].signum() == sign } else { c.motion[j] == 0 });
        if !along_axis_only {
            continue;
        }
        let dist = view_after(&view, c).subgoal_distance(&intent);
        match best {
            Some((_, b)) if b <= dist => {}
            _ => best = Some((i, dist)),
        }
    }
    best.map(|(i, _)| i)
}

pub fn check_oracle_brute_force(cases: usize, seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut compared = 0;
    for case in 0..cases {
        let (env, obs) = loop {
            let (env, obs) = random_state(&mut rng);
            // Completed tasks have no subgoal to score against.
            if SceneView::from_observation(&obs, 0).intent(env.stages(), env.task()).is_some() {
                break (env, obs);
            }
        };
        let d = Direction::ALL[rng.gen_range(0..Direction::ALL.len())];
        let complaint = if obs.stage_hint.unwrap_or(0) >= 2 {
            Complaint::Aim { target: "bin".into(), direction: d }
        } else {
            Complaint::Reach { object: "can".into(), direction: d }
        };
        let text = long_text(&complaint);
        let correction = VerbalCorrection::new(text.clone(), 0, FeedbackStyle::Long).map_err(|e| e.to_string())?;
        let method = if rng.gen_bool(0.5) { ProposalMethod::Onedim } else { ProposalMethod::OnedimPlusOriginal };
        let grip = if rng.gen_bool(0.5) { GRIP_OPEN } else { GRIP_CLOSED };
        let original = Action::new(rng.gen_range(-40..=40), rng.gen_range(-40..=40), rng.gen_range(-40..=40), 0, 0, 0, grip);
        let magnitude = [10, 20, 30][rng.gen_range(0..3)];
        let set = propose_with(method, original, grip, magnitude, rng.gen_bool(0.3)).map_err(|e| e.to_string())?;
        let q = CriticQuery { env: &env, obs: &obs, correction: &correction, include_feedback: true, original_action: original };
        let oracle = OracleCritic::select_index(&q, &set.candidates).map_err(|e| format!("case {case}: {e}"))?;
        let Some(expected) = brute_force(&env, &obs, &set.candidates, d) else {
            return Err(format!("case {case}: no consistent candidate for {text:?}"));
        };
        if oracle != expected {
            return Err(format!("case {case} ({text:?}): oracle {oracle}, brute force {expected}"));
        }
        compared += 1;
    }
    Ok(format!("{compared}/{cases} cases agree"))
}

// ---------------------------------------------------------------------------
// Weighting schemes

/// Demo, stopped-with-intervention rollout and clean rollout, covering
/// every segment label.
pub fn mixed_label_dataset(k: usize) -> WeightedDataset {
    let env = Env::builtin("pickplace").expect("builtin task");
    let demo = rollout(&env, 11, &mut ScriptedExpert::default(), None, &RolloutConfig::default()).expect("demo");
    let mut intervened = stopped_trajectory(5, 40, 20);
    for s in &mut intervened.steps[20..30] {
        s.actor = Actor::Intervention;
    }
    intervened.intervention_span = Some(Span::new(20, 30));
    intervened.relabel_segments(k).expect("valid segmentation");
    let clean = {
        let mut t = stopped_trajectory(6, 12, 12);
        t.stop_index = None;
        t.stop_action = None;
        t.correction = None;
        t.relabel_segments(k).expect("valid segmentation");
        t
    };
    aggregate(&[demo], &[intervened, clean], 10).expect("non-empty dataset")
}

pub fn check_weight_orderings(ds: &WeightedDataset, params: &WeightParams) -> Check {
    let by = |scheme| assign_weights(ds.clone(), scheme, params).map_err(|e| e.to_string());
    let weights_of = |w: &WeightedDataset, label: SegmentLabel, source: Source| -> Vec<f64> {
        w.samples.iter().filter(|s| s.label == label && s.source == source).map(|s| s.weight).collect()
    };
    let labels = [SegmentLabel::Nominal, SegmentLabel::PreIntervention, SegmentLabel::Intervention, SegmentLabel::PostIntervention];
    for scheme in [WeightScheme::Bc, WeightScheme::HgDagger, WeightScheme::Iwr, WeightScheme::Sirius, WeightScheme::OlafSirius] {
        let w = by(scheme)?;
        if w.len() != ds.len() || w.episodes != ds.episodes {
            return Err(format!("{}: weighting changed the samples", scheme.as_str()));
        }
        for (a, b) in w.samples.iter().zip(&ds.samples) {
            if a.target != b.target || a.episode != b.episode || a.t != b.t || a.label != b.label {
                return Err(format!("{}: weighting changed a target or history", scheme.as_str()));
            }
        }
        if w.samples.iter().any(|s| s.source == Source::Demo && s.weight != 1.0) {
            return Err(format!("{}: demo weight differs from 1", scheme.as_str()));
        }
    }
    let bc = by(WeightScheme::Bc)?;
    if bc.samples.iter().any(|s| s.weight != 1.0) {
        return Err("bc: some weight differs from 1".into());
    }
    let hg = by(WeightScheme::HgDagger)?;
    for label in labels {
        let ws = weights_of(&hg, label, Source::Rollout);
        let expected = if label == SegmentLabel::Intervention { 1.0 } else { 0.0 };
        if ws.iter().any(|&w| w != expected) {
            return Err(format!("hg_dagger: {label:?} rollout weight differs from {expected}"));
        }
    }
    let min = |v: &[f64]| v.iter().copied().fold(f64::INFINITY, f64::min);
    let max = |v: &[f64]| v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let iwr = by(WeightScheme::Iwr)?;
    let (nom, pre, int) = (
        weights_of(&iwr, SegmentLabel::Nominal, Source::Rollout),
        weights_of(&iwr, SegmentLabel::PreIntervention, Source::Rollout),
        weights_of(&iwr, SegmentLabel::Intervention, Source::Rollout),
    );
    if !(min(&int) > max(&nom)) || pre.iter().any(|&p| nom.iter().any(|&n| p != n)) {
        return Err("iwr: expected intervention > nominal == pre-intervention".into());
    }
    let sirius = by(WeightScheme::Sirius)?;
    let (nom, pre, int) = (
        weights_of(&sirius, SegmentLabel::Nominal, Source::Rollout),
        weights_of(&sirius, SegmentLabel::PreIntervention, Source::Rollout),
        weights_of(&sirius, SegmentLabel::Intervention, Source::Rollout),
    );
    if !(max(&pre) < min(&nom) && max(&nom) < min(&int)) {
        return Err("sirius: expected pre-intervention < nominal < intervention".into());
    }
    let olaf = by(WeightScheme::OlafSirius)?;
    if olaf.samples.iter().zip(&sirius.samples).any(|(a, b)| a.weight != b.weight) {
        return Err("olaf_sirius weights differ from sirius".into());
    }
    for label in labels {
        for source in [Source::Demo, Source::Rollout] {
            let w = weight_for(WeightScheme::Sirius, params, label, source);
            if !(w >= 0.0 && w.is_finite()) {
                return Err(format!("sirius weight {w} for {label:?}/{source:?}"));
            }
        }
    }
    Ok(format!("orderings hold over {} samples under all five schemes", ds.len()))
}

/// Largest gradient difference between a hg_dagger-weighted batch and the
/// same batch with its zero-weight samples removed.
pub fn zero_weight_removal_gap() -> Result<f64, String> {
    let ds = mixed_label_dataset(DEFAULT_WINDOW);
    let ds = assign_weights(ds, WeightScheme::HgDagger, &WeightParams::default()).map_err(|e| e.to_string())?;
    let env = Env::builtin("pickplace").map_err(|e| e.to_string())?;
    let features = FeatureSpec::for_env(&env, false);
    let set = TrainingSet::new(&ds, &features);
    let policy = PolicyParams::init(features.clone(), ds.history_len, vec![32, 32], set.normalization(), 3, String::new());
    let all = set.weighted_examples(&policy);
    if all.iter().all(|e| e.weight > 0.0) {
        return Err("dataset has no zero-weight samples".into());
    }
    let kept: Vec<Example> = all.iter().filter(|e| e.weight > 0.0).cloned().collect();
    let (la, ga) = policy.loss_and_grad(&all).map_err(|e| e.to_string())?;
    let (lk, gk) = policy.loss_and_grad(&kept).map_err(|e| e.to_string())?;
    let gap = ga.iter().zip(&gk).map(|(a, b)| (a - b).abs()).fold((la - lk).abs(), f64::max);
    Ok(gap)
}

// ---------------------------------------------------------------------------
// Learner numerics

/// Random (params, batch) draw for the default architecture on pickplace.
pub fn gradient_draw(draw: u64) -> (PolicyParams, Vec<Example>) {
    let env = Env::builtin("pickplace").expect("builtin task");
    let features = FeatureSpec::for_env(&env, false);
    let policy = PolicyParams::untrained(features, 10, TrainConfig::default().hidden, 1000 + draw);
    let mut rng = ChaCha8Rng::seed_from_u64(draw);
    let mut policy = policy;
    let offset = policy.architecture.log_std_offset();
    for v in &mut policy.params[offset..] {
        *v = rng.gen_range(-1.0..1.0);
    }
    let batch = (0..8)
        .map(|i| Example {
            input: (0..policy.architecture.input_dim).map(|_| rng.gen_range(-2.0..2.0)).collect(),
            target: std::array::from_fn(|_| rng.gen_range(-1.0..1.0)),
            weight: if i == 0 { 0.0 } else { rng.gen_range(0.1..2.0) },
        })
        .collect();
    (policy, batch)
}

pub fn max_grad_check_error(draws: u64) -> Result<f64, String> {
    let mut worst = 0.0f64;
    for d in 0..draws {
        let (policy, batch) = gradient_draw(d);
        let r = policy.grad_check(&batch, 1e-5).map_err(|e| e.to_string())?;
        worst = worst.max(r.max_relative_error);
    }
    Ok(worst)
}

/// Trains on the first ten samples of one demonstration and returns the
/// largest gap between the predicted mean and a target.
pub fn overfit_gap() -> Result<f64, String> {
    let env = Env::builtin("pickplace").map_err(|e| e.to_string())?;
    let demo = rollout(&env, 1, &mut ScriptedExpert::default(), None, &RolloutConfig::default()).map_err(|e| e.to_string())?;
    let mut ds = aggregate(&[demo], &[], 10).map_err(|e| e.to_string())?;
    ds.samples.truncate(10);
    let features = FeatureSpec::for_env(&env, false);
    let cfg = TrainConfig { steps_per_epoch: 2000, epochs: 1, seed: 2, ..TrainConfig::default() };
    let out = train(&ds, &features, &cfg).map_err(|e| e.to_string())?;
    let set = TrainingSet::new(&ds, &features);
    let mut worst = 0.0f64;
    for e in set.weighted_examples(&out.params) {
        let g = out.params.forward_input(&e.input).map_err(|e| e.to_string())?;
        for d in 0..ACTION_DIM {
            worst = worst.max((g.mean[d] - e.target[d]).abs());
        }
    }
    Ok(worst)
}

pub fn check_training_determinism() -> Check {
    let env = Env::builtin("pickplace").map_err(|e| e.to_string())?;
    let demos = collect_demos(&env, 3, 4, Execution::default()).map_err(|e| e.to_string())?;
    let ds = aggregate(&demos, &[], 10).map_err(|e| e.to_string())?;
    let features = FeatureSpec::for_env(&env, false);
    let cfg = TrainConfig { steps_per_epoch: 100, epochs: 2, seed: 9, ..TrainConfig::default() };
    let a = train(&ds, &features, &cfg).map_err(|e| e.to_string())?;
    let b = train(&ds, &features, &cfg).map_err(|e| e.to_string())?;
    let same = a.params.params.iter().zip(&b.params.params).all(|(x, y)| x.to_bits() == y.to_bits());
    if !same || a.epoch_median_loss != b.epoch_median_loss {
        return Err("two runs with the same seed differ".into());
    }
    Ok(format!("{} parameters bitwise identical", a.params.params.len()))
}

// ---------------------------------------------------------------------------
// Relabel budgets

/// Query counts of Basic and Full relabeling on every stopped rollout of a
/// quickly trained policy: (corrections, Σ basic, Σ full, Σ min(k, T)).
pub fn relabel_budgets(seed: u64, n: usize) -> Result<(usize, usize, usize, usize), String> {
    let env = Env::builtin("pickplace").map_err(|e| e.to_string())?;
    let demos = collect_demos(&env, 10, seed, Execution::default()).map_err(|e| e.to_string())?;
    let cfg = TrainConfig { epochs: 2, steps_per_epoch: 200, seed, ..TrainConfig::default() };
    let policy = pretrain(&env, &demos, 10, &cfg).map_err(|e| e.to_string())?.params;
    let rollouts = run_interaction(&env, &policy, &UserConfig::default(), n, seed, DEFAULT_WINDOW, Execution::default())
        .map_err(|e| e.to_string())?;
    let (mut corrections, mut basic, mut full, mut expected) = (0, 0, 0, 0);
    for t in rollouts.iter().filter(|t| t.is_stopped()) {
        let stop = t.stop_index.expect("stopped");
        let counts = |mode| -> Result<usize, String> {
            let counter = olaf_core::critic::QueryCounter::new();
            let critic = olaf_core::critic::CountingCritic::new(OracleCritic, counter.clone());
            let out = relabel(t, &env, &critic, &RelabelConfig { mode, ..RelabelConfig::default() }).map_err(|e| e.to_string())?;
            if out.selection_queries != counter.selection() {
                return Err("reported and counted selection queries differ".into());
            }
            Ok(counter.selection())
        };
        let b = counts(RelabelMode::Basic)?;
        let f = counts(RelabelMode::Full)?;
        let want = stop.min(DEFAULT_WINDOW);
        if b != usize::from(want > 0) || f != want {
            return Err(format!("stop {stop}: basic {b}, full {f}, expected 1 and {want}"));
        }
        corrections += 1;
        basic += b;
        full += f;
        expected += want;
    }
    Ok((corrections, basic, full, expected))
}

// ---------------------------------------------------------------------------
// Experiments

/// Small end-to-end configuration for determinism checks.
pub fn tiny_pipeline() -> PipelineConfig {
    let mut p = PipelineConfig { demos: 4, interactions: 6, eval_trials: 4, ..PipelineConfig::default() };
    p.pretrain = TrainConfig { epochs: 1, steps_per_epoch: 40, ..p.pretrain };
    p.train = TrainConfig { epochs: 2, steps_per_epoch: 40, eval_interval: 1, ..p.train };
    p
}

pub fn run_experiment(pipeline: PipelineConfig, seeds: Vec<u64>, arms: Vec<ArmConfig>, exec: Execution) -> Result<(ExperimentReport, f64), String> {
    let started = Instant::now();
    let mut e = Experiment::new(ExperimentConfig { pipeline, seeds, arms }, Arc::new(OracleCritic));
    e.exec = exec;
    let report = e.run().map_err(|e| e.to_string())?;
    Ok((report, started.elapsed().as_secs_f64()))
}

pub fn check_end_to_end_determinism() -> Check {
    let arms = vec![ArmConfig::self_imitation(false), ArmConfig::olaf(FeedbackStyle::Long, RelabelMode::Basic, false)];
    let (a, _) = run_experiment(tiny_pipeline(), vec![0, 1], arms.clone(), Execution::default())?;
    let (b, _) = run_experiment(tiny_pipeline(), vec![0, 1], arms, Execution::default())?;
    if a.digest() != b.digest() {
        return Err("reports of two identical runs differ".into());
    }
    Ok(format!("report digest {} on both runs", &a.digest()[..12]))
}

//! The end-to-end loop: demonstrations, pretraining, user interaction, data
//! synthesis, policy update and evaluation, over several arms and seeds.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::archive;
use crate::critic::{CountingCritic, Critic, ProposalConfig, QueryCounter};
use crate::dataset::{aggregate, assign_weights, WeightParams, WeightScheme, DEFAULT_HISTORY};
use crate::env::{rollout, Env, RolloutConfig, ScriptedExpert, ScriptedUser, UserConfig};
use crate::error::{CoreError, Result};
use crate::exec::{derive_seed, Execution};
use crate::learner::{evaluate, train, FeatureSpec, PolicyController, PolicyParams, TrainConfig, TrainOutcome};
use crate::proposal::{ProposalMethod, DEFAULT_MAGNITUDE};
use crate::relabel::{relabel, strip_to_verbal_only, RelabelConfig, RelabelMode};
use crate::segment::DEFAULT_WINDOW;
use crate::types::{FeedbackStyle, Trajectory};

/// Seed streams, so every random draw is a function of the master seed.
pub mod stream {
    pub const DEMO: u64 = 1;
    pub const PRETRAIN: u64 = 2;
    pub const INTERACTION: u64 = 3;
    pub const USER: u64 = 4;
    pub const TRAIN: u64 = 5;
    pub const EVAL: u64 = 6;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CriticBackend {
    Oracle,
    Remote,
}

/// How rollouts become training trajectories.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Synthesis {
    /// Keep the executed actions (behavior cloning on the same data).
    SelfImitation,
    /// Relabel the pre-intervention window with the critic.
    Relabel,
}

/// Everything that distinguishes one arm of an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ArmConfig {
    pub name: String,
    pub synthesis: Synthesis,
    pub feedback: FeedbackStyle,
    pub method: ProposalMethod,
    pub mode: RelabelMode,
    pub weighting: WeightScheme,
    pub include_intervention: bool,
    pub pin_gripper: bool,
}

impl Default for ArmConfig {
    fn default() -> Self {
        Self {
            name: "olaf".into(),
            synthesis: Synthesis::Relabel,
            feedback: FeedbackStyle::Long,
            method: ProposalMethod::OnedimPlusOriginal,
            mode: RelabelMode::Basic,
            weighting: WeightScheme::Bc,
            include_intervention: false,
            pin_gripper: false,
        }
    }
}

impl ArmConfig {
    /// Behavior cloning on the aggregated data without relabeling.
    pub fn self_imitation(include_intervention: bool) -> Self {
        Self {
            name: if include_intervention { "bc_intervention" } else { "bc" }.into(),
            synthesis: Synthesis::SelfImitation,
            include_intervention,
            ..Self::default()
        }
    }

    pub fn olaf(feedback: FeedbackStyle, mode: RelabelMode, include_intervention: bool) -> Self {
        let mut name = format!("olaf_{}_{}", feedback.as_str(), mode.as_str());
        if include_intervention {
            name.push_str("_intervention");
        }
        Self { name, feedback, mode, include_intervention, ..Self::default() }
    }

    /// Parses the standard arm names: `bc`, `bc_intervention` and
    /// `olaf_<feedback>_<mode>[_intervention]`.
    pub fn from_name(name: &str) -> Result<Self> {
        let (base, include_intervention) = match name.strip_suffix("_intervention") {
            Some(b) => (b, true),
            None => (name, false),
        };
        if base == "bc" {
            return Ok(Self::self_imitation(include_intervention));
        }
        let parts: Vec<&str> = base.split('_').collect();
        match parts.as_slice() {
            ["olaf", feedback, mode] => Ok(Self::olaf(feedback.parse()?, mode.parse()?, include_intervention)),
            _ => Err(CoreError::Parameter(format!(
                "unknown arm {name:?}; expected bc[_intervention] or olaf_<long|short|none>_<basic|full>[_intervention]"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub task: String,
    /// Demonstrations (M).
    pub demos: usize,
    /// Interaction rollouts per round (N).
    pub interactions: usize,
    /// Pre-intervention window (k).
    pub window: usize,
    #[serde(flatten)]
    pub arm: ArmConfig,
    pub magnitude: i32,
    pub weights: WeightParams,
    pub critic: CriticBackend,
    pub pretrain: TrainConfig,
    pub train: TrainConfig,
    pub rounds: usize,
    pub seed: u64,
    pub eval_trials: usize,
    pub history_len: usize,
    pub user: UserConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let train = TrainConfig { epochs: 40, ..TrainConfig::default() };
        Self {
            task: "pickplace".into(),
            demos: 50,
            interactions: 100,
            window: DEFAULT_WINDOW,
            arm: ArmConfig::default(),
            magnitude: DEFAULT_MAGNITUDE,
            weights: WeightParams::default(),
            critic: CriticBackend::Oracle,
            pretrain: train.clone(),
            train,
            rounds: 1,
            seed: 0,
            eval_trials: 50,
            history_len: DEFAULT_HISTORY,
            user: UserConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.demos == 0 || self.interactions == 0 || self.rounds == 0 {
            return Err(CoreError::Parameter("demos, interactions and rounds must be at least 1".into()));
        }
        if self.window == 0 || self.eval_trials == 0 || self.history_len == 0 {
            return Err(CoreError::Parameter("window, eval trials and history length must be positive".into()));
        }
        self.pretrain.validate()?;
        self.train.validate()
    }

    /// The task environment: a builtin name or a path to a task JSON file.
    pub fn env(&self) -> Result<Env> {
        Env::builtin(&self.task).or_else(|_| crate::env::TaskSpec::load(&self.task).and_then(Env::new))
    }

    /// Relabeling settings for `arm` under this pipeline.
    pub fn relabel_config(&self, arm: &ArmConfig) -> RelabelConfig {
        RelabelConfig {
            mode: arm.mode,
            window: self.window,
            proposal: ProposalConfig { method: arm.method, magnitude: self.magnitude, include_roll_pitch: false },
            include_intervention: arm.include_intervention,
            include_feedback: arm.feedback != FeedbackStyle::None,
            pin_gripper: arm.pin_gripper,
        }
    }

    /// Scripted-user settings for `arm` under this pipeline.
    pub fn user_config(&self, arm: &ArmConfig) -> UserConfig {
        UserConfig {
            style: arm.feedback,
            intervene_prob: if arm.include_intervention { 1.0 } else { 0.0 },
            ..self.user.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    /// Shared settings; its arm fields are ignored in favor of `arms`.
    pub pipeline: PipelineConfig,
    pub seeds: Vec<u64>,
    pub arms: Vec<ArmConfig>,
}

impl ExperimentConfig {
    pub fn single(pipeline: PipelineConfig) -> Self {
        Self { seeds: vec![pipeline.seed], arms: vec![pipeline.arm.clone()], pipeline }
    }

    pub fn hash(&self) -> String {
        let text = serde_json::to_string(self).expect("config serializes");
        hex::encode(&Sha256::digest(text.as_bytes())[..8])
    }
}

/// Outcome of one arm on one seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    /// Success rate of the final parameters.
    pub final_success: f64,
    /// Best success rate over stored checkpoints.
    pub best_success: f64,
    pub best_epoch: usize,
    /// Final success rate after each round.
    pub round_success: Vec<f64>,
    pub rollouts: usize,
    pub stopped: usize,
    pub interventions: usize,
    /// Stopped rollouts whose relabeling failed and were left out.
    pub excluded: usize,
    pub selection_queries: usize,
    pub gripper_queries: usize,
    pub samples: usize,
    pub first_epoch_loss: f64,
    pub last_epoch_loss: f64,
    /// Stage and message of a failure; results above are partial.
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmReport {
    pub arm: ArmConfig,
    pub seeds: Vec<SeedResult>,
    pub mean_final_success: f64,
    pub mean_best_success: f64,
    pub total_selection_queries: usize,
    pub total_excluded: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainResult {
    pub seed: u64,
    pub success: f64,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config_hash: String,
    pub task: String,
    pub pretrain: Vec<PretrainResult>,
    pub arms: Vec<ArmReport>,
    /// Not part of [`ExperimentReport::digest`].
    pub wall_clock_secs: f64,
}

impl ExperimentReport {
    pub fn arm(&self, name: &str) -> Option<&ArmReport> {
        self.arms.iter().find(|a| a.arm.name == name)
    }

    /// Hash of every reported number except wall-clock time.
    pub fn digest(&self) -> String {
        let canonical = Self { wall_clock_secs: 0.0, ..self.clone() };
        let text = serde_json::to_string(&canonical).expect("report serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }
}

/// Scripted-expert demonstrations; every one must succeed.
pub fn collect_demos(env: &Env, m: usize, seed: u64, exec: Execution) -> Result<Vec<Trajectory>> {
    let cfg = RolloutConfig::default();
    exec.map_range(m, |i| {
        let s = derive_seed(seed, stream::DEMO, i as u64);
        let traj = rollout(env, s, &mut ScriptedExpert::default(), None, &cfg)?;
        if !traj.success {
            return Err(CoreError::Invariant(format!("expert demonstration failed on {} seed {s}", env.task().name)));
        }
        Ok(traj)
    })
    .into_iter()
    .collect()
}

/// Behavior cloning on demonstrations only.
pub fn pretrain(env: &Env, demos: &[Trajectory], history_len: usize, cfg: &TrainConfig) -> Result<TrainOutcome> {
    let ds = aggregate(demos, &[], history_len)?;
    train(&ds, &FeatureSpec::for_env(env, cfg.use_stage_hint), cfg)
}

/// `n` policy rollouts watched by a scripted user.
pub fn run_interaction(
    env: &Env,
    policy: &PolicyParams,
    user: &UserConfig,
    n: usize,
    seed: u64,
    window: usize,
    exec: Execution,
) -> Result<Vec<Trajectory>> {
    let cfg = RolloutConfig { window, ..RolloutConfig::default() };
    exec.map_range(n, |i| {
        let env_seed = derive_seed(seed, stream::INTERACTION, i as u64);
        let mut u = ScriptedUser::new(user.clone(), derive_seed(seed, stream::USER, i as u64));
        rollout(env, env_seed, &mut PolicyController::new(policy), Some(&mut u), &cfg)
    })
    .into_iter()
    .collect()
}

/// Training trajectories synthesized from one batch of rollouts.
#[derive(Debug, Clone, PartialEq)]
pub struct Synthesized {
    pub trajectories: Vec<Trajectory>,
    pub excluded: usize,
    pub selection_queries: usize,
    pub gripper_queries: usize,
}

/// Applies an arm's synthesis rule to every rollout. Relabeling failures
/// exclude the trajectory; never-stopped rollouts pass through unchanged.
pub fn synthesize(
    env: &Env,
    rollouts: &[Trajectory],
    arm: &ArmConfig,
    relabel_cfg: &RelabelConfig,
    critic: &dyn Critic,
    exec: Execution,
) -> Result<Synthesized> {
    let keep = |t: &Trajectory| if arm.include_intervention { t.clone() } else { strip_to_verbal_only(t) };
    let results: Vec<Option<(Trajectory, usize, usize)>> = match arm.synthesis {
        Synthesis::SelfImitation => rollouts.iter().map(|t| Some((keep(t), 0, 0))).collect(),
        Synthesis::Relabel => exec.map(rollouts, |t| {
            if !t.is_stopped() {
                return Some((t.clone(), 0, 0));
            }
            match relabel(t, env, critic, relabel_cfg) {
                Ok(out) => Some((out.trajectory, out.selection_queries, out.gripper_queries)),
                Err(e) => {
                    log::warn!("excluding {}/{}: {e}", t.task, t.seed);
                    None
                }
            }
        }),
    };
    let mut out = Synthesized { trajectories: Vec::new(), excluded: 0, selection_queries: 0, gripper_queries: 0 };
    for r in results {
        match r {
            Some((t, s, g)) => {
                out.selection_queries += s;
                out.gripper_queries += g;
                if !t.steps.is_empty() {
                    out.trajectories.push(t);
                }
            }
            None => out.excluded += 1,
        }
    }
    Ok(out)
}

/// Runs every arm on every seed. Arms on the same seed share demos, the
/// pretrained policy and (in round one) interaction rollouts whenever their
/// user settings coincide.
pub struct Experiment {
    pub config: ExperimentConfig,
    pub critic: Arc<dyn Critic>,
    pub exec: Execution,
    /// Directory for archives, checkpoints and the report.
    pub out_dir: Option<PathBuf>,
}

struct SeedContext {
    env: Env,
    demos: Vec<Trajectory>,
    pretrained: PolicyParams,
    rollouts: HashMap<(FeedbackStyle, bool), Vec<Trajectory>>,
}

impl Experiment {
    pub fn new(config: ExperimentConfig, critic: Arc<dyn Critic>) -> Self {
        Self { config, critic, exec: Execution::default(), out_dir: None }
    }

    fn dir(&self, parts: &[&str]) -> Result<Option<PathBuf>> {
        let Some(root) = &self.out_dir else { return Ok(None) };
        let mut p = root.clone();
        p.extend(parts);
        std::fs::create_dir_all(&p)?;
        Ok(Some(p))
    }

    pub fn run(&self) -> Result<ExperimentReport> {
        let started = Instant::now();
        let p = &self.config.pipeline;
        p.validate()?;
        if self.config.seeds.is_empty() || self.config.arms.is_empty() {
            return Err(CoreError::Parameter("experiment needs at least one seed and one arm".into()));
        }
        let env = p.env()?;
        let mut pretrain_results = Vec::new();
        let mut per_arm: Vec<Vec<SeedResult>> = vec![Vec::new(); self.config.arms.len()];
        for &seed in &self.config.seeds {
            let mut ctx = self.prepare_seed(env.clone(), seed)?;
            pretrain_results.push(PretrainResult {
                seed,
                success: evaluate(&ctx.pretrained, &ctx.env, p.eval_trials, derive_seed(seed, stream::EVAL, 0), self.exec)?
                    .success_rate,
                samples: ctx.demos.iter().map(|t| t.steps.len()).sum(),
            });
            for (i, arm) in self.config.arms.iter().enumerate() {
                log::info!("seed {seed}: arm {}", arm.name);
                per_arm[i].push(self.run_arm(&mut ctx, seed, arm));
            }
        }
        let arms = self
            .config
            .arms
            .iter()
            .zip(per_arm)
            .map(|(arm, seeds)| {
                let n = seeds.len() as f64;
                ArmReport {
                    arm: arm.clone(),
                    mean_final_success: seeds.iter().map(|s| s.final_success).sum::<f64>() / n,
                    mean_best_success: seeds.iter().map(|s| s.best_success).sum::<f64>() / n,
                    total_selection_queries: seeds.iter().map(|s| s.selection_queries).sum(),
                    total_excluded: seeds.iter().map(|s| s.excluded).sum(),
                    seeds,
                }
            })
            .collect();
        let report = ExperimentReport {
            config_hash: self.config.hash(),
            task: env.task().name.clone(),
            pretrain: pretrain_results,
            arms,
            wall_clock_secs: started.elapsed().as_secs_f64(),
        };
        if let Some(dir) = self.dir(&[])? {
            std::fs::write(dir.join("report.json"), serde_json::to_vec_pretty(&report)?)?;
            std::fs::write(dir.join("config.json"), serde_json::to_vec_pretty(&self.config)?)?;
        }
        Ok(report)
    }

    fn prepare_seed(&self, env: Env, seed: u64) -> Result<SeedContext> {
        let p = &self.config.pipeline;
        let demos = collect_demos(&env, p.demos, seed, self.exec)?;
        let cfg = TrainConfig { seed: derive_seed(seed, stream::PRETRAIN, 0), ..p.pretrain.clone() };
        let pretrained = pretrain(&env, &demos, p.history_len, &cfg)?.params;
        if let Some(dir) = self.dir(&[&format!("seed{seed}")])? {
            archive::write_archive(dir.join("demos.jsonl"), &demos)?;
            pretrained.save(dir.join("pretrained.json"))?;
        }
        Ok(SeedContext { env, demos, pretrained, rollouts: HashMap::new() })
    }

    fn run_arm(&self, ctx: &mut SeedContext, seed: u64, arm: &ArmConfig) -> SeedResult {
        let mut result = SeedResult {
            seed,
            final_success: 0.0,
            best_success: 0.0,
            best_epoch: 0,
            round_success: Vec::new(),
            rollouts: 0,
            stopped: 0,
            interventions: 0,
            excluded: 0,
            selection_queries: 0,
            gripper_queries: 0,
            samples: 0,
            first_epoch_loss: f64::NAN,
            last_epoch_loss: f64::NAN,
            error: None,
        };
        if let Err((stage, e)) = self.run_arm_inner(ctx, seed, arm, &mut result) {
            log::error!("seed {seed} arm {} failed during {stage}: {e}", arm.name);
            result.error = Some(format!("{stage}: {e}"));
        }
        result
    }

    fn run_arm_inner(
        &self,
        ctx: &mut SeedContext,
        seed: u64,
        arm: &ArmConfig,
        result: &mut SeedResult,
    ) -> std::result::Result<(), (&'static str, CoreError)> {
        let p = &self.config.pipeline;
        let user = p.user_config(arm);
        let relabel_cfg = p.relabel_config(arm);
        let counter = QueryCounter::new();
        let critic = CountingCritic::new(Arc::clone(&self.critic), Arc::clone(&counter));
        let features = FeatureSpec::for_env(&ctx.env, p.train.use_stage_hint);
        let eval_seed = derive_seed(seed, stream::EVAL, 0);
        let arm_dir = self.dir(&[&format!("seed{seed}"), &arm.name]).map_err(|e| ("output", e))?;
        let mut synthesized = Vec::new();
        let mut policy = ctx.pretrained.clone();
        for round in 0..p.rounds {
            let round_seed = derive_seed(seed, stream::INTERACTION, round as u64);
            let rollouts = if round == 0 {
                let key = (arm.feedback, arm.include_intervention);
                if !ctx.rollouts.contains_key(&key) {
                    let r = run_interaction(&ctx.env, &policy, &user, p.interactions, round_seed, p.window, self.exec)
                        .map_err(|e| ("interaction", e))?;
                    ctx.rollouts.insert(key, r);
                }
                ctx.rollouts[&key].clone()
            } else {
                run_interaction(&ctx.env, &policy, &user, p.interactions, round_seed, p.window, self.exec)
                    .map_err(|e| ("interaction", e))?
            };
            result.rollouts += rollouts.len();
            result.stopped += rollouts.iter().filter(|t| t.is_stopped()).count();
            result.interventions += rollouts.iter().filter(|t| t.intervention_span.is_some()).count();
            let synth = synthesize(&ctx.env, &rollouts, arm, &relabel_cfg, &critic, self.exec)
                .map_err(|e| ("synthesis", e))?;
            result.excluded += synth.excluded;
            result.selection_queries += synth.selection_queries;
            result.gripper_queries += synth.gripper_queries;
            if let Some(dir) = &arm_dir {
                let write = |name: String, t: &[Trajectory]| archive::write_archive(dir.join(name), t);
                write(format!("interaction_r{round}.jsonl"), &rollouts).map_err(|e| ("output", e))?;
                write(format!("synthesized_r{round}.jsonl"), &synth.trajectories).map_err(|e| ("output", e))?;
            }
            synthesized.extend(synth.trajectories);

            let ds = aggregate(&ctx.demos, &synthesized, p.history_len)
                .and_then(|d| assign_weights(d, arm.weighting, &p.weights))
                .map_err(|e| ("aggregation", e))?;
            result.samples = ds.len();
            let cfg = TrainConfig { seed: derive_seed(seed, stream::TRAIN, round as u64), ..p.train.clone() };
            let out = train(&ds, &features, &cfg).map_err(|e| ("training", e))?;
            result.first_epoch_loss = out.epoch_median_loss.first().copied().unwrap_or(f64::NAN);
            result.last_epoch_loss = out.epoch_median_loss.last().copied().unwrap_or(f64::NAN);
            result.best_success = -1.0;
            for c in &out.checkpoints {
                let rate =
                    evaluate(&c.params, &ctx.env, p.eval_trials, eval_seed, self.exec).map_err(|e| ("evaluation", e))?.success_rate;
                if rate > result.best_success {
                    result.best_success = rate;
                    result.best_epoch = c.epoch;
                }
                if c.epoch == cfg.epochs {
                    result.final_success = rate;
                }
            }
            result.round_success.push(result.final_success);
            if let Some(dir) = &arm_dir {
                out.params.save(dir.join(format!("policy_r{round}.json"))).map_err(|e| ("output", e))?;
            }
            policy = out.params;
        }
        let counted = counter.selection();
        if counted != result.selection_queries {
            return Err((
                "synthesis",
                CoreError::Invariant(format!("critic saw {counted} selection queries, relabeling reported {}", result.selection_queries)),
            ));
        }
        Ok(())
    }
}

/// Runs one pipeline configuration (a single arm and seed).
pub fn run_pipeline(config: PipelineConfig, critic: Arc<dyn Critic>, out_dir: Option<&Path>) -> Result<ExperimentReport> {
    let mut exp = Experiment::new(ExperimentConfig::single(config), critic);
    exp.out_dir = out_dir.map(Path::to_path_buf);
    exp.run()
}

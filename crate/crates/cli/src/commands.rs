use std::path::{Path, PathBuf};
use std::sync::Arc;

use olaf_core::archive;
use olaf_core::critic::{Critic, LlmCritic, OracleCritic};
use olaf_core::dataset::{aggregate, assign_weights};
use olaf_core::env::{Env, ScriptedExpert};
use olaf_core::exec::{derive_seed, Execution};
use olaf_core::learner::{evaluate, evaluate_controller, train, FeatureSpec, PolicyParams, TrainConfig};
use olaf_core::session::{
    collect_demos, pretrain, run_interaction, stream, synthesize, ArmConfig, CriticBackend, Experiment, ExperimentConfig,
    ExperimentReport, PipelineConfig, Synthesis,
};

use crate::error::{CliError, Result};
use crate::{ArmArgs, BackendArg, Cli, Command};

pub fn run(cli: Cli) -> Result<()> {
    let g = &cli.global;
    let mut pipeline = match &g.config {
        Some(path) => read_json::<PipelineConfig>(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = g.seed {
        pipeline.seed = seed;
    }
    if let Some(b) = g.backend {
        pipeline.critic = match b {
            BackendArg::Oracle => CriticBackend::Oracle,
            BackendArg::Remote => CriticBackend::Remote,
        };
    }
    pipeline.validate()?;
    let exec = if g.sequential { Execution::Sequential } else { Execution::Parallel };
    let out = g.out.as_path();
    std::fs::create_dir_all(out)?;
    let env = pipeline.env()?;
    let seed = pipeline.seed;

    match cli.command {
        Command::Demo { count } => {
            let demos = collect_demos(&env, count.unwrap_or(pipeline.demos), seed, exec)?;
            let path = out.join("demos.jsonl");
            archive::write_archive(&path, &demos)?;
            println!("wrote {} demonstrations to {}", demos.len(), path.display());
        }
        Command::Pretrain { demos } => {
            let demos = archive::read_archive(demos.unwrap_or_else(|| out.join("demos.jsonl")))?;
            let cfg = TrainConfig { seed: derive_seed(seed, stream::PRETRAIN, 0), ..pipeline.pretrain.clone() };
            let outcome = pretrain(&env, &demos, pipeline.history_len, &cfg)?;
            let path = out.join("pretrained.json");
            outcome.params.save(&path)?;
            print_losses(&outcome.epoch_median_loss);
            println!("wrote {}", path.display());
        }
        Command::Interact { policy, count, arm } => {
            let params = PolicyParams::load(policy.unwrap_or_else(|| out.join("pretrained.json")))?;
            let arm = arm_with(&pipeline, &arm);
            let user = pipeline.user_config(&arm);
            let round_seed = derive_seed(seed, stream::INTERACTION, 0);
            let n = count.unwrap_or(pipeline.interactions);
            let rollouts = run_interaction(&env, &params, &user, n, round_seed, pipeline.window, exec)?;
            let path = out.join("interaction.jsonl");
            archive::write_archive(&path, &rollouts)?;
            let stopped = rollouts.iter().filter(|t| t.is_stopped()).count();
            let success = rollouts.iter().filter(|t| t.success).count();
            println!("{n} rollouts: {stopped} stopped, {success} successful; wrote {}", path.display());
        }
        Command::Relabel { input, arm } => {
            let rollouts = archive::read_archive(input.unwrap_or_else(|| out.join("interaction.jsonl")))?;
            let arm = arm_with(&pipeline, &arm);
            let critic = make_critic(&pipeline, g.remote_config.as_deref())?;
            let synth = synthesize(&env, &rollouts, &arm, &pipeline.relabel_config(&arm), critic.as_ref(), exec)?;
            let path = out.join("synthesized.jsonl");
            archive::write_archive(&path, &synth.trajectories)?;
            println!(
                "{} trajectories ({} excluded), {} selection and {} gripper queries; wrote {}",
                synth.trajectories.len(),
                synth.excluded,
                synth.selection_queries,
                synth.gripper_queries,
                path.display()
            );
        }
        Command::Train { demos, data, weighting } => {
            let demos = archive::read_archive(demos.unwrap_or_else(|| out.join("demos.jsonl")))?;
            let data_path = data.unwrap_or_else(|| out.join("synthesized.jsonl"));
            let synthesized = if data_path.exists() { archive::read_archive(&data_path)? } else { Vec::new() };
            let ds = aggregate(&demos, &synthesized, pipeline.history_len)?;
            let ds = assign_weights(ds, weighting.unwrap_or(pipeline.arm.weighting), &pipeline.weights)?;
            let cfg = TrainConfig { seed: derive_seed(seed, stream::TRAIN, 0), ..pipeline.train.clone() };
            let features = FeatureSpec::for_env(&env, cfg.use_stage_hint);
            let outcome = train(&ds, &features, &cfg)?;
            let path = out.join("policy.json");
            outcome.params.save(&path)?;
            print_losses(&outcome.epoch_median_loss);
            println!("trained on {} samples; wrote {}", ds.len(), path.display());
        }
        Command::Eval { policy, trials } => {
            let trials = trials.unwrap_or(pipeline.eval_trials);
            let eval_seed = derive_seed(seed, stream::EVAL, 0);
            let report = match policy.as_deref() {
                Some("expert") => evaluate_controller(&env, trials, eval_seed, exec, ScriptedExpert::default)?,
                other => {
                    let path = other.map(PathBuf::from).unwrap_or_else(|| out.join("policy.json"));
                    evaluate(&PolicyParams::load(path)?, &env, trials, eval_seed, exec)?
                }
            };
            std::fs::write(out.join("eval.json"), serde_json::to_vec_pretty(&report)?)?;
            println!("success rate {:.3} over {trials} trials", report.success_rate);
        }
        Command::Experiment { arms, seeds } => {
            let arms = arms.iter().map(|a| ArmConfig::from_name(a)).collect::<olaf_core::Result<Vec<_>>>()?;
            let seeds = if seeds.is_empty() { vec![seed] } else { seeds };
            let critic = make_critic(&pipeline, g.remote_config.as_deref())?;
            let mut exp = Experiment::new(ExperimentConfig { pipeline, seeds, arms }, critic);
            exp.exec = exec;
            exp.out_dir = Some(out.to_path_buf());
            let report = exp.run()?;
            print!("{}", summarize(&report));
            println!("wrote {}", out.join("report.json").display());
        }
        Command::Serve { policy, bind, tick_hz, resume_after_plain_stop } => {
            serve(env, out, &policy, bind, tick_hz, resume_after_plain_stop, pipeline.window)?;
        }
        Command::Report { input } => {
            let report: ExperimentReport = read_json(&input.unwrap_or_else(|| out.join("report.json")))?;
            print!("{}", summarize(&report));
        }
    }
    Ok(())
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|source| CliError::Read { path: path.to_path_buf(), source })?;
    serde_json::from_str(&text).map_err(|source| CliError::Parse { path: path.to_path_buf(), source })
}

fn arm_with(pipeline: &PipelineConfig, args: &ArmArgs) -> ArmConfig {
    let mut arm = pipeline.arm.clone();
    if let Some(f) = args.feedback {
        arm.feedback = f;
    }
    if let Some(m) = args.mode {
        arm.mode = m;
    }
    if let Some(m) = args.method {
        arm.method = m;
    }
    if args.self_imitation {
        arm.synthesis = Synthesis::SelfImitation;
    }
    arm.include_intervention |= args.intervention;
    arm
}

fn make_critic(pipeline: &PipelineConfig, remote_config: Option<&Path>) -> Result<Arc<dyn Critic>> {
    match pipeline.critic {
        CriticBackend::Oracle => Ok(Arc::new(OracleCritic)),
        CriticBackend::Remote => {
            let cfg = match remote_config {
                Some(p) => read_json(p)?,
                None => olaf_core::critic::backend::RemoteConfig::default(),
            };
            Ok(Arc::new(LlmCritic::new(olaf_core::critic::backend::RemoteBackend::new(cfg)?)))
        }
    }
}

fn serve(
    env: Env,
    out: &Path,
    policy: &str,
    bind: std::net::SocketAddr,
    tick_hz: f64,
    resume_after_plain_stop: bool,
    window: usize,
) -> Result<()> {
    use olaf_hitl::{PolicySource, ServerConfig, SessionConfig};
    let source = if policy == "expert" {
        PolicySource::Expert(ScriptedExpert::default())
    } else {
        PolicySource::Checkpoint(Arc::new(PolicyParams::load(policy)?))
    };
    let mut session = SessionConfig::new(env, source);
    session.window = window;
    session.out_dir = Some(out.join("sessions"));
    session.resume_after_plain_stop = resume_after_plain_stop;
    let cfg = ServerConfig { bind, tick_hz, session };
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async move {
        let server = olaf_hitl::serve(cfg).await?;
        println!("listening on ws://{}/ws (health: http://{0}/health)", server.addr());
        tokio::select! {
            _ = tokio::signal::ctrl_c() => server.shutdown().await,
        }
        Ok(())
    })
}

fn print_losses(losses: &[f64]) {
    if let (Some(first), Some(last)) = (losses.first(), losses.last()) {
        println!("median loss {first:.4} -> {last:.4} over {} epochs", losses.len());
    }
}

/// Plain-text table of an experiment report.
pub fn summarize(report: &ExperimentReport) -> String {
    let mut s = format!("task {}  config {}  {:.0}s\n", report.task, report.config_hash, report.wall_clock_secs);
    for p in &report.pretrain {
        s.push_str(&format!("pretrained seed {}: success {:.3} on {} samples\n", p.seed, p.success, p.samples));
    }
    s.push_str(&format!("{:<32} {:>7} {:>7} {:>9} {:>9}  per-seed final\n", "arm", "final", "best", "queries", "excluded"));
    for a in &report.arms {
        let per_seed: Vec<String> = a
            .seeds
            .iter()
            .map(|r| match &r.error {
                Some(_) => "err".to_string(),
                None => format!("{:.2}", r.final_success),
            })
            .collect();
        s.push_str(&format!(
            "{:<32} {:>7.3} {:>7.3} {:>9} {:>9}  {}\n",
            a.arm.name,
            a.mean_final_success,
            a.mean_best_success,
            a.total_selection_queries,
            a.total_excluded,
            per_seed.join(" ")
        ));
        for r in a.seeds.iter().filter(|r| r.error.is_some()) {
            s.push_str(&format!("  seed {} failed: {}\n", r.seed, r.error.as_deref().unwrap_or_default()));
        }
    }
    s
}

//! `olaf`: run the pipeline stage by stage, as a whole experiment, or as a
//! live session server.

mod commands;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use olaf_core::dataset::WeightScheme;
use olaf_core::proposal::ProposalMethod;
use olaf_core::relabel::RelabelMode;
use olaf_core::types::FeedbackStyle;

#[derive(Debug, Parser)]
#[command(name = "olaf", version, about = "Imitation learning from verbal corrections")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Pipeline configuration (JSON); unspecified fields take defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed; overrides the configuration.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Directory for every artifact a command reads or writes.
    #[arg(long, global = true, default_value = "runs")]
    pub out: PathBuf,
    /// Critic backend; overrides the configuration.
    #[arg(long, global = true, value_enum)]
    pub backend: Option<BackendArg>,
    /// Remote endpoint settings (JSON), used with `--backend remote`.
    #[arg(long, global = true)]
    pub remote_config: Option<PathBuf>,
    #[arg(long, global = true, default_value = "info")]
    pub log_level: log::LevelFilter,
    /// Run every stage on one thread.
    #[arg(long, global = true)]
    pub sequential: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BackendArg {
    Oracle,
    Remote,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Collect scripted demonstrations into `<out>/demos.jsonl`.
    Demo {
        /// Number of demonstrations (defaults to the configuration).
        #[arg(long)]
        count: Option<usize>,
    },
    /// Behavior-clone the demonstrations into `<out>/pretrained.json`.
    Pretrain {
        #[arg(long)]
        demos: Option<PathBuf>,
    },
    /// Roll out a policy watched by the scripted user into
    /// `<out>/interaction.jsonl`.
    Interact {
        #[arg(long)]
        policy: Option<PathBuf>,
        #[arg(long)]
        count: Option<usize>,
        #[command(flatten)]
        arm: ArmArgs,
    },
    /// Turn interaction rollouts into training trajectories
    /// (`<out>/synthesized.jsonl`).
    Relabel {
        #[arg(long)]
        input: Option<PathBuf>,
        #[command(flatten)]
        arm: ArmArgs,
    },
    /// Train on demonstrations plus synthesized data into `<out>/policy.json`.
    Train {
        #[arg(long)]
        demos: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        weighting: Option<WeightScheme>,
    },
    /// Evaluate a policy checkpoint (or the scripted expert).
    Eval {
        /// Checkpoint to evaluate; `expert` evaluates the scripted expert.
        #[arg(long)]
        policy: Option<String>,
        #[arg(long)]
        trials: Option<usize>,
    },
    /// Run arms over seeds and write `<out>/report.json`.
    Experiment {
        /// Arm names: bc, bc_intervention, olaf_<long|short|none>_<basic|full>[_intervention].
        #[arg(long, value_delimiter = ',', default_value = "bc,olaf_long_basic")]
        arms: Vec<String>,
        /// Seeds; defaults to the master seed alone.
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
    },
    /// Serve live sessions over a websocket; finished trajectories go to
    /// `<out>/sessions`.
    Serve {
        /// Checkpoint driving the robot; `expert` uses the scripted expert.
        #[arg(long, default_value = "expert")]
        policy: String,
        #[arg(long, default_value = "127.0.0.1:8765")]
        bind: std::net::SocketAddr,
        #[arg(long, default_value_t = 10.0)]
        tick_hz: f64,
        /// Resume the policy when control is released without teleoperation.
        #[arg(long)]
        resume_after_plain_stop: bool,
    },
    /// Summarize an experiment report.
    Report {
        #[arg(long)]
        input: Option<PathBuf>,
    },
}

/// Overrides of the arm settings in the configuration.
#[derive(Debug, Clone, Args)]
pub struct ArmArgs {
    #[arg(long)]
    pub feedback: Option<FeedbackStyle>,
    #[arg(long)]
    pub mode: Option<RelabelMode>,
    #[arg(long)]
    pub method: Option<ProposalMethod>,
    /// Keep the executed actions instead of relabeling.
    #[arg(long)]
    pub self_imitation: bool,
    /// Let the scripted user take over after stopping, and keep the
    /// intervention in the training data.
    #[arg(long)]
    pub intervention: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new().filter_level(cli.global.log_level).format_timestamp_secs().init();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

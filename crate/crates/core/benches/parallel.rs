//! Parallel versus sequential execution of the data-parallel stages:
//! demonstration collection, interaction rollouts with relabeling, and
//! policy evaluation.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use olaf_core::critic::OracleCritic;
use olaf_core::env::{Env, UserConfig};
use olaf_core::exec::Execution;
use olaf_core::learner::{evaluate, TrainConfig};
use olaf_core::relabel::{RelabelConfig, RelabelMode};
use olaf_core::session::{collect_demos, pretrain, run_interaction, synthesize, ArmConfig};
use olaf_core::types::FeedbackStyle;

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn bench(c: &mut Criterion) {
    let env = Env::builtin("pickplace").expect("builtin task");
    let demos = collect_demos(&env, 20, 0, Execution::Sequential).expect("demos");
    let cfg = TrainConfig { epochs: 2, steps_per_epoch: 200, ..TrainConfig::default() };
    let policy = pretrain(&env, &demos, 10, &cfg).expect("pretrain").params;
    let rollouts = run_interaction(&env, &policy, &UserConfig::default(), 40, 0, 15, Execution::Sequential)
        .expect("rollouts");
    let arm = ArmConfig::olaf(FeedbackStyle::Long, RelabelMode::Full, false);
    let relabel_cfg = RelabelConfig { mode: RelabelMode::Full, ..RelabelConfig::default() };

    let mut group = c.benchmark_group("stages");
    group.sample_size(10);
    for (name, exec) in MODES {
        group.bench_with_input(BenchmarkId::new("demos", name), &exec, |b, &exec| {
            b.iter(|| collect_demos(&env, 50, 1, exec).expect("demos"))
        });
        group.bench_with_input(BenchmarkId::new("interaction", name), &exec, |b, &exec| {
            b.iter(|| run_interaction(&env, &policy, &UserConfig::default(), 40, 1, 15, exec).expect("rollouts"))
        });
        group.bench_with_input(BenchmarkId::new("relabel_full", name), &exec, |b, &exec| {
            b.iter(|| synthesize(&env, &rollouts, &arm, &relabel_cfg, &OracleCritic, exec).expect("synthesis"))
        });
        group.bench_with_input(BenchmarkId::new("evaluate", name), &exec, |b, &exec| {
            b.iter(|| evaluate(&policy, &env, 50, 2, exec).expect("evaluation"))
        });
    }
    group.finish();
}

criterion_group!(benches, bench);
criterion_main!(benches);

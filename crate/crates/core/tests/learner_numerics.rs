mod common;

use common::*;
use olaf_core::dataset::aggregate;
use olaf_core::env::Env;
use olaf_core::exec::Execution;
use olaf_core::learner::{train, FeatureSpec, TrainConfig};
use olaf_core::session::collect_demos;

#[test]
fn gradients_match_finite_differences_over_twenty_draws() {
    let worst = max_grad_check_error(20).unwrap();
    assert!(worst <= 1e-4, "max relative error {worst}");
}

#[test]
fn overfits_ten_samples() {
    let gap = overfit_gap().unwrap();
    assert!(gap <= 0.05, "largest gap {gap}");
}

#[test]
fn training_is_bitwise_deterministic() {
    check_training_determinism().unwrap();
}

#[test]
fn loss_decreases_over_training() {
    let env = Env::builtin("pickplace").unwrap();
    let demos = collect_demos(&env, 10, 0, Execution::default()).unwrap();
    let ds = aggregate(&demos, &[], 10).unwrap();
    let cfg = TrainConfig { epochs: 3, steps_per_epoch: 300, ..TrainConfig::default() };
    let out = train(&ds, &FeatureSpec::for_env(&env, false), &cfg).unwrap();
    assert!(out.epoch_median_loss.last().unwrap() < out.epoch_median_loss.first().unwrap());
}

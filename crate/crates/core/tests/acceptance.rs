//! Acceptance report: one PASS/FAIL line per criterion.
//!
//! Exits successfully after printing the report; set
//! `OLAF_ACCEPTANCE_STRICT=1` to exit with a failure status when any
//! criterion fails.

mod common;

use common::*;
use olaf_core::dataset::WeightParams;
use olaf_core::exec::Execution;
use olaf_core::relabel::RelabelMode;
use olaf_core::session::{ArmConfig, ArmReport, ExperimentReport, PipelineConfig};
use olaf_core::types::FeedbackStyle;

const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];
const BUDGET_SECS: f64 = 600.0;

struct Report {
    failures: usize,
}

impl Report {
    fn line(&mut self, id: &str, check: Check) {
        match check {
            Ok(detail) => println!("PASS criterion {id}: {detail}"),
            Err(reason) => {
                self.failures += 1;
                println!("FAIL criterion {id}: {reason}");
            }
        }
    }
}

fn arm<'a>(r: &'a ExperimentReport, name: &str) -> Result<&'a ArmReport, String> {
    r.arm(name).ok_or_else(|| format!("arm {name} missing from report"))
}

fn per_seed(a: &ArmReport) -> Vec<f64> {
    a.seeds.iter().map(|s| s.final_success).collect()
}

fn fmt_rates(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:.2}")).collect::<Vec<_>>().join(" ")
}

fn seed_errors(r: &ExperimentReport) -> Result<(), String> {
    for a in &r.arms {
        for s in &a.seeds {
            if let Some(e) = &s.error {
                return Err(format!("{} seed {} failed: {e}", a.arm.name, s.seed));
            }
        }
    }
    Ok(())
}

fn loss_decreased(r: &ExperimentReport) -> bool {
    r.arms.iter().flat_map(|a| &a.seeds).all(|s| s.last_epoch_loss < s.first_epoch_loss)
}

/// OLAF against a baseline: mean gap, seeds where OLAF is not worse.
fn compare(olaf: &ArmReport, base: &ArmReport) -> (f64, usize) {
    let wins = per_seed(olaf).iter().zip(per_seed(base)).filter(|(o, b)| **o >= *b).count();
    (olaf.mean_final_success - base.mean_final_success, wins)
}

fn criterion_1(r: &ExperimentReport, secs: f64) -> Check {
    seed_errors(r)?;
    let bc = arm(r, "bc")?;
    let olaf = arm(r, "olaf_long_basic")?;
    let (gap, wins) = compare(olaf, bc);
    let detail = format!(
        "OLAF {:.3} [{}] vs BC {:.3} [{}]: gap {:+.1} points, OLAF >= BC on {wins}/5 seeds, {secs:.0}s, loss decreased on every run: {}",
        olaf.mean_final_success,
        fmt_rates(&per_seed(olaf)),
        bc.mean_final_success,
        fmt_rates(&per_seed(bc)),
        gap * 100.0,
        loss_decreased(r)
    );
    if gap >= 0.08 - 1e-12 && wins >= 4 && secs <= BUDGET_SECS {
        Ok(detail)
    } else {
        Err(format!("{detail} (needs gap >= +8.0, >= 4/5 seeds, <= {BUDGET_SECS:.0}s)"))
    }
}

fn criterion_2(r: &ExperimentReport) -> Check {
    let bc = arm(r, "bc_intervention")?;
    let olaf = arm(r, "olaf_long_basic_intervention")?;
    let (gap, _) = compare(olaf, bc);
    let detail = format!(
        "OLAF+intervention {:.3} [{}] vs BC+intervention {:.3} [{}]: gap {:+.1} points",
        olaf.mean_final_success,
        fmt_rates(&per_seed(olaf)),
        bc.mean_final_success,
        fmt_rates(&per_seed(bc)),
        gap * 100.0
    );
    if gap >= 0.04 - 1e-12 {
        Ok(detail)
    } else {
        Err(format!("{detail} (needs >= +4.0)"))
    }
}

fn criterion_3(first: &ExperimentReport, rest: &ExperimentReport) -> Check {
    let long = arm(first, "olaf_long_basic")?;
    let none = arm(rest, "olaf_none_basic")?;
    let short = arm(rest, "olaf_short_basic")?;
    let detail = format!(
        "long {:.3} vs none {:.3}; short {:.3} [{}] (reported only)",
        long.mean_final_success,
        none.mean_final_success,
        short.mean_final_success,
        fmt_rates(&per_seed(short))
    );
    if long.mean_final_success >= none.mean_final_success {
        Ok(detail)
    } else {
        Err(format!("{detail} (needs long >= none)"))
    }
}

fn criterion_4(first: &ExperimentReport, rest: &ExperimentReport) -> Check {
    let basic = arm(first, "olaf_long_basic")?;
    let full = arm(rest, "olaf_long_full")?;
    let gap = (basic.mean_final_success - full.mean_final_success).abs();
    let mut corrections = 0;
    let mut full_queries = 0;
    let mut expected = 0;
    for seed in SEEDS {
        let (c, b, f, e) = relabel_budgets(seed, 40)?;
        if b != c {
            return Err(format!("seed {seed}: basic issued {b} selection queries for {c} corrections"));
        }
        if f != e {
            return Err(format!("seed {seed}: full issued {f} selection queries, expected {e}"));
        }
        corrections += c;
        full_queries += f;
        expected += e;
    }
    let detail = format!(
        "basic {:.3} vs full {:.3} (|gap| {:.1} points); full queries {full_queries} = sum min(k,T) {expected} over {corrections} corrections, basic 1 each; experiment totals basic {} / full {}",
        basic.mean_final_success,
        full.mean_final_success,
        gap * 100.0,
        basic.total_selection_queries,
        full.total_selection_queries
    );
    if gap <= 0.06 + 1e-12 {
        Ok(detail)
    } else {
        Err(format!("{detail} (needs |gap| <= 6.0)"))
    }
}

fn criterion_5() -> Check {
    let orderings = check_weight_orderings(&mixed_label_dataset(15), &WeightParams::default())?;
    let gap = zero_weight_removal_gap()?;
    if gap > 1e-10 {
        return Err(format!("{orderings}; zero-weight vs removal gradient gap {gap:.2e} > 1e-10"));
    }
    Ok(format!("{orderings}; zero-weight vs removal gradient gap {gap:.2e}"))
}

fn criterion_6() -> Check {
    let golden = check_prompt_golden()?;
    let gripper = check_gripper_examples()?;
    Ok(format!("{golden}; {gripper}"))
}

fn criterion_9() -> Check {
    let grad = max_grad_check_error(20)?;
    let overfit = overfit_gap()?;
    let det = check_training_determinism()?;
    let detail = format!("max grad-check error {grad:.2e} over 20 draws; overfit gap {overfit:.4}; {det}");
    if grad <= 1e-4 && overfit <= 0.05 {
        Ok(detail)
    } else {
        Err(format!("{detail} (needs grad <= 1e-4, overfit <= 0.05)"))
    }
}

fn main() {
    let mut report = Report { failures: 0 };
    let pipeline = PipelineConfig::default();

    let first_arms = vec![ArmConfig::self_imitation(false), ArmConfig::olaf(FeedbackStyle::Long, RelabelMode::Basic, false)];
    let first = run_experiment(pipeline.clone(), SEEDS.to_vec(), first_arms, Execution::default());
    let rest_arms = vec![
        ArmConfig::olaf(FeedbackStyle::Long, RelabelMode::Full, false),
        ArmConfig::olaf(FeedbackStyle::Short, RelabelMode::Basic, false),
        ArmConfig::olaf(FeedbackStyle::None, RelabelMode::Basic, false),
        ArmConfig::self_imitation(true),
        ArmConfig::olaf(FeedbackStyle::Long, RelabelMode::Basic, true),
    ];
    let rest = run_experiment(pipeline, SEEDS.to_vec(), rest_arms, Execution::default());

    match (&first, &rest) {
        (Ok((f, secs)), Ok((r, _))) => {
            report.line("1", criterion_1(f, *secs));
            report.line("2", seed_errors(r).and_then(|_| criterion_2(r)));
            report.line("3", criterion_3(f, r));
            report.line("4", criterion_4(f, r));
        }
        (Err(e), _) | (_, Err(e)) => {
            for id in ["1", "2", "3", "4"] {
                report.line(id, Err(format!("experiment failed: {e}")));
            }
        }
    }
    report.line("5", criterion_5());
    report.line("6", criterion_6());
    report.line("7", check_retry_contract());
    report.line("8", check_oracle_brute_force(200, 17).and_then(|d| {
        if d.starts_with("200/200") {
            Ok(d)
        } else {
            Err(d)
        }
    }));
    report.line("9", criterion_9());
    report.line("10", check_end_to_end_determinism());

    println!("acceptance: {} of 10 criteria passed", 10 - report.failures);
    let strict = std::env::var("OLAF_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    if strict && report.failures > 0 {
        std::process::exit(1);
    }
}

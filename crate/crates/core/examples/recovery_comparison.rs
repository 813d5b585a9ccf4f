//! Stage 2 from the misleading start: GRPO alone against GRPO with harvested
//! repair guidance, per seed. Extra arguments are config overrides.
//!
//! cargo run --release --example recovery_comparison -- seeds=42,52 stage2_steps=1000

use offrail::harness::{run_two_stage, ExperimentConfig, Mode, Summary};

fn main() -> offrail::Result<()> {
    let overrides: Vec<String> = std::env::args().skip(1).collect();
    let base = ExperimentConfig::default().with_overrides(&overrides)?;
    for mode in [Mode::RecoveryGrpo, Mode::RecoveryGuided] {
        let config = ExperimentConfig { mode, ..base.clone() };
        let runs = run_two_stage(&config)?;
        let histories: Vec<_> = runs.iter().map(|r| r.history.clone()).collect();
        let summary = Summary::from_histories(mode, &histories);
        println!("{mode}");
        for s in &summary.seeds {
            println!(
                "  seed {:>3}: steps to 90% {:>6}  min retention {:.1}  final success {:.1}",
                s.seed,
                s.steps_to_90.map_or("never".to_string(), |n| n.to_string()),
                s.min_retention,
                s.final_success
            );
        }
        println!(
            "  final success {:.2} +- {:.2}, retention {:.2} +- {:.2}",
            summary.final_success.mean,
            summary.final_success.std,
            summary.final_retention.mean,
            summary.final_retention.std
        );
    }
    Ok(())
}

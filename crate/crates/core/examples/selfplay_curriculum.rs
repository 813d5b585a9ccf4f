//! Polluter/agent self-play with an adaptive polluter and with a frozen one,
//! reporting held-out recovery per quarter and the polluter's block win rates.
//!
//! cargo run --release --example selfplay_curriculum -- [key=value ...]

use offrail::harness::metrics::SelfplaySummary;
use offrail::harness::{run_selfplay, ExperimentConfig};

fn main() -> offrail::Result<()> {
    let overrides: Vec<String> = std::env::args().skip(1).collect();
    let base = ExperimentConfig::default().with_overrides(&overrides)?;
    for frozen in [false, true] {
        let config = ExperimentConfig {
            freeze_polluter: frozen,
            ..base.clone()
        };
        let runs = run_selfplay(&config)?;
        let summary = SelfplaySummary::from_runs(frozen, &runs);
        println!("{} polluter", if frozen { "frozen" } else { "adaptive" });
        for s in &summary.seeds {
            let q = s.held_out_quarters.unwrap_or([f64::NAN; 4]);
            let wins = &s.block_win_rates;
            println!(
                "  seed {:>3}: held-out quarters {:.3} {:.3} {:.3} {:.3}  final {:.3}  win rate first/last block {:.2}/{:.2}",
                s.seed,
                q[0],
                q[1],
                q[2],
                q[3],
                s.final_recovery,
                wins.first().copied().unwrap_or(f64::NAN),
                wins.last().copied().unwrap_or(f64::NAN)
            );
        }
        println!(
            "  final recovery {:.3} +- {:.3}",
            summary.final_recovery.mean, summary.final_recovery.std
        );
    }
    Ok(())
}

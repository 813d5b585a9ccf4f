//! Closed-form SNR of the GRPO gradient against the empirical SNR of
//! conditioned groups, on a policy caught partway through rail training.
//!
//! cargo run --release --example snr_curve -- [seed]

use offrail::harness::{run_snr, ExperimentConfig, SnrSettings};

fn main() -> offrail::Result<()> {
    let seed = std::env::args().nth(1).map_or(Ok(42), |s| s.parse()).expect("seed must be an integer");
    let config = ExperimentConfig::default();
    let settings = SnrSettings::default();
    let run = run_snr(&config, seed, &settings)?;
    println!(
        "snapshot at rail step {} with clean-start success {:.3}",
        run.snapshot_step, run.snapshot_success
    );
    println!("{:>3} {:>12} {:>12} {:>9} {:>9}", "k", "closed", "empirical", "snr err", "cov err");
    for p in &run.points {
        println!(
            "{:>3} {:>12.5} {:>12.5} {:>8.1}% {:>8.1}%",
            p.k,
            p.closed_form,
            p.empirical,
            100.0 * p.snr_relative_error(),
            100.0 * p.cov_relative_error()
        );
    }
    // The closed form peaks where failures stop dominating the noise.
    let best = run
        .points
        .iter()
        .max_by(|a, b| a.closed_form.total_cmp(&b.closed_form))
        .map(|p| p.k);
    println!("closed form is largest at k = {best:?}");
    Ok(())
}

//! One guidance step on a harvested repair versus a rare matched-length
//! repair, at the fork below the junction: measured gain against the
//! first-order prediction.
//!
//! cargo run --release --example first_order_gain -- [key=value ...]

use offrail::harness::{run_gain, ExperimentConfig, GainSettings};

fn main() -> offrail::Result<()> {
    let overrides: Vec<String> = std::env::args().skip(1).collect();
    let config = ExperimentConfig::default().with_overrides(&overrides)?;
    let records = run_gain(&config, &GainSettings::default())?;
    for (seed, r) in config.seeds.iter().zip(&records) {
        let i = &r.in_dist;
        println!(
            "seed {seed}: in-dist {:?} likelihood {:.3e} predicted {:.3e} measured {:.3e} (x{:.2})",
            i.moves,
            i.prediction.target_likelihood,
            i.prediction.predicted_gain,
            i.measured,
            i.agreement()
        );
        match (&r.off_dist, r.likelihood_ratio(), r.measured_ratio()) {
            (Some(o), Some(lr), Some(gr)) => println!(
                "         off-dist {:?} likelihood ratio {lr:.1} measured {:.3e} gain ratio {gr:.1}",
                o.moves, o.measured
            ),
            _ => println!("         no matched-length rare repair exists here"),
        }
    }
    Ok(())
}

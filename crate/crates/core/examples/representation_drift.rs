//! How far recovery training moves the probe-state logit rows: harvested
//! guidance against cloning one rare repair, in a shared PCA plane.
//!
//! cargo run --release --example representation_drift -- [key=value ...]

use offrail::harness::{run_drift, ExperimentConfig};

fn main() -> offrail::Result<()> {
    let overrides: Vec<String> = std::env::args().skip(1).collect();
    let config = ExperimentConfig::default().with_overrides(&overrides)?;
    for c in run_drift(&config)? {
        println!(
            "seed {:>3}: d guided {:.3} (retention {:.1})  d ood-clone {:.3} (retention {:.1})",
            c.seed, c.guided.d, c.guided_final_retention, c.ood_clone.d, c.ood_clone_final_retention
        );
        let largest = c
            .ood_clone
            .per_row_shifts
            .iter()
            .map(|s| s.delta_m1.abs())
            .fold(0.0, f64::max);
        println!("          largest first-component row shift under cloning {largest:.3}");
    }
    Ok(())
}

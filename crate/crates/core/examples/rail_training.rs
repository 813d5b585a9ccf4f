//! Stage 1: plain GRPO from the clean start until the policy follows a
//! consistent rail. Optionally saves the policy checkpoint.
//!
//! cargo run --release --example rail_training -- [seed] [checkpoint path]

use offrail::harness::{train_rail, ExperimentConfig};

fn main() -> offrail::Result<()> {
    let mut args = std::env::args().skip(1);
    let seed: u64 = args.next().map_or(42, |s| s.parse().expect("seed must be an integer"));
    let config = ExperimentConfig::default();
    let world = config.world()?;
    let out = train_rail(&world, &config, seed)?;

    let first_success = out.history.steps.iter().find(|s| s.k > 0).map(|s| s.step);
    let silent = out.history.steps.iter().filter(|s| s.k == 0 || s.k == s.group_size).count();
    println!(
        "seed {seed}: clean-start success {:.3} after {} updates",
        out.clean_success, config.stage1_steps
    );
    println!("first group with a success at step {first_success:?}; {silent} updates had k = 0 or k = G");

    let mut cells: Vec<_> = out.rail.cells().collect();
    cells.sort();
    let listed: Vec<String> = cells.iter().map(ToString::to_string).collect();
    println!("rail ({} cells): {}", cells.len(), listed.join(" "));
    let misleading = world.misleading_start()?;
    println!("misleading start {misleading} on the rail: {}", out.rail.contains(misleading));

    if let Some(path) = args.next() {
        out.policy.save(&path)?;
        println!("policy written to {path}");
    }
    Ok(())
}

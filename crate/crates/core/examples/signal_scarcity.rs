//! How often a group of G rollouts contains any success at all, exactly and
//! by simulation, next to the linear approximation G p.

use offrail::harness::run_scarcity;

fn main() -> offrail::Result<()> {
    let rows = run_scarcity(&[0.001, 0.003, 0.01, 0.03, 0.1], &[4, 8, 16, 64], 200_000, 42)?;
    println!("{:>6} {:>4} {:>10} {:>10} {:>10} {:>8}", "p", "G", "exact", "simulated", "G p", "lin err");
    for r in rows {
        let s = r.report;
        println!(
            "{:>6} {:>4} {:>10.5} {:>10.5} {:>10.5} {:>7.2}%",
            s.p,
            s.group_size,
            s.exact_prob,
            r.mc_estimate,
            s.linear_approx,
            100.0 * s.relative_error
        );
    }
    Ok(())
}

//! Analytic softmax score rows against central differences, plus the
//! closed-form binary advantages against group normalization.

use offrail::grpo::{binary_advantages_closed_form, group_advantages, DEFAULT_EPS_NORM};
use offrail::harness::run_gradcheck;

fn main() -> offrail::Result<()> {
    let report = run_gradcheck(1000, 42, 1e-5)?;
    println!(
        "{} finite-difference checks at h = {:e}: max relative error {:.2e}, {} above {:e}",
        report.checks, report.step, report.max_error, report.failures, report.tolerance
    );

    let g = 8;
    for k in 1..g {
        let rewards: Vec<f64> = (0..g).map(|i| if i < k { 1.0 } else { 0.0 }).collect();
        let adv = group_advantages(&rewards, DEFAULT_EPS_NORM);
        let closed = binary_advantages_closed_form(k, g)?;
        println!(
            "k = {k}: success {:+.6} (closed {:+.6})  failure {:+.6} (closed {:+.6})  c = {:.4}",
            adv[0],
            closed.a,
            adv[g - 1],
            closed.b,
            closed.c
        );
    }
    Ok(())
}

//! Probability that a group of G rollouts contains at least one success.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScarcityReport {
    pub p: f64,
    pub group_size: usize,
    /// 1 - (1 - p)^G.
    pub exact_prob: f64,
    /// G * p.
    pub linear_approx: f64,
    /// |linear - exact| / exact, or 0 when both vanish.
    pub relative_error: f64,
}

pub fn success_probability(p: f64, group_size: usize) -> Result<ScarcityReport> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidArgument(format!("p must lie in [0, 1], got {p}")));
    }
    if group_size == 0 {
        return Err(Error::InvalidArgument("group size must be positive".into()));
    }
    let g = group_size as f64;
    let exact_prob = if p == 1.0 {
        1.0
    } else {
        -(g * (-p).ln_1p()).exp_m1()
    };
    let linear_approx = g * p;
    let relative_error = if exact_prob == 0.0 {
        0.0
    } else {
        (linear_approx - exact_prob).abs() / exact_prob
    };
    Ok(ScarcityReport {
        p,
        group_size,
        exact_prob,
        linear_approx,
        relative_error,
    })
}

/// Reports for every (p, G) pair, p-major.
pub fn scarcity_table(ps: &[f64], group_sizes: &[usize]) -> Result<Vec<ScarcityReport>> {
    ps.iter()
        .flat_map(|&p| group_sizes.iter().map(move |&g| success_probability(p, g)))
        .collect()
}

/// Fraction of `n_groups` simulated groups with at least one Bernoulli(p)
/// success, and its binomial standard error.
pub fn monte_carlo_any_success<R: Rng + ?Sized>(
    p: f64,
    group_size: usize,
    n_groups: usize,
    rng: &mut R,
) -> Result<(f64, f64)> {
    if !(0.0..=1.0).contains(&p) || group_size == 0 || n_groups == 0 {
        return Err(Error::InvalidArgument(format!(
            "invalid Monte-Carlo request p={p} G={group_size} n={n_groups}"
        )));
    }
    let mut hits = 0usize;
    for _ in 0..n_groups {
        if (0..group_size).any(|_| rng.random_bool(p)) {
            hits += 1;
        }
    }
    let est = hits as f64 / n_groups as f64;
    let se = (est * (1.0 - est) / n_groups as f64).sqrt();
    Ok((est, se))
}

//! Signal-to-noise ratio of the GRPO gradient estimator given k successes.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gridworld::{GridWorld, MazeState, Trajectory};
use crate::grpo::{binary_advantages_closed_form, grpo_gradient, TrajectoryGroup};
use crate::policy::{PolicyTable, ScoreGradient};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SnrInputs {
    pub k: usize,
    pub group_size: usize,
    /// |mu1 - mu0|^2.
    pub mu_diff_norm_sq: f64,
    pub tr_sigma1: f64,
    pub tr_sigma0: f64,
}

/// |mu1 - mu0|^2 / (tr Sigma1 / k + tr Sigma0 / (G - k)).
pub fn snr_squared(inputs: &SnrInputs) -> Result<f64> {
    let SnrInputs {
        k,
        group_size,
        mu_diff_norm_sq,
        tr_sigma1,
        tr_sigma0,
    } = *inputs;
    if k == 0 || k >= group_size {
        return Err(Error::DegenerateGroup { k, group_size });
    }
    if !(tr_sigma1 >= 0.0 && tr_sigma0 >= 0.0 && mu_diff_norm_sq >= 0.0) {
        return Err(Error::InvalidArgument(
            "traces and squared norm must be non-negative".into(),
        ));
    }
    let noise = tr_sigma1 / k as f64 + tr_sigma0 / (group_size - k) as f64;
    if noise == 0.0 {
        return Err(Error::InvalidArgument("both class covariances vanish".into()));
    }
    Ok(mu_diff_norm_sq / noise)
}

/// Class-conditional means and covariance traces of the per-trajectory score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassStats {
    pub mu1: ScoreGradient,
    pub mu0: ScoreGradient,
    /// Unbiased sample traces.
    pub tr_sigma1: f64,
    pub tr_sigma0: f64,
    pub n1: usize,
    pub n0: usize,
}

impl ClassStats {
    pub fn mu_diff_norm_sq(&self) -> f64 {
        let mut d = self.mu1.clone();
        d.add_scaled(&self.mu0, -1.0);
        d.norm_sq()
    }

    pub fn snr_inputs(&self, k: usize, group_size: usize) -> SnrInputs {
        SnrInputs {
            k,
            group_size,
            mu_diff_norm_sq: self.mu_diff_norm_sq(),
            tr_sigma1: self.tr_sigma1,
            tr_sigma0: self.tr_sigma0,
        }
    }

    /// Predicted trace of Cov(g_hat | K = k): c_k^2 (tr Sigma1 / k + tr Sigma0 / (G - k)).
    pub fn predicted_cov_trace(&self, k: usize, group_size: usize) -> Result<f64> {
        let c = binary_advantages_closed_form(k, group_size)?.c;
        Ok(c * c * (self.tr_sigma1 / k as f64 + self.tr_sigma0 / (group_size - k) as f64))
    }
}

/// Sample mean and unbiased trace of the covariance.
pub fn mean_and_trace(vectors: &[ScoreGradient]) -> Result<(ScoreGradient, f64)> {
    let n = vectors.len();
    if n < 2 {
        return Err(Error::InsufficientData(format!(
            "need at least two vectors, got {n}"
        )));
    }
    let mut mean = ScoreGradient::default();
    for v in vectors {
        mean.add_scaled(v, 1.0 / n as f64);
    }
    let ss: f64 = vectors
        .iter()
        .map(|v| {
            let mut d = v.clone();
            d.add_scaled(&mean, -1.0);
            d.norm_sq()
        })
        .sum();
    Ok((mean, ss / (n - 1) as f64))
}

/// Class statistics from raw score vectors.
pub fn class_stats_from_scores(
    successes: &[ScoreGradient],
    failures: &[ScoreGradient],
) -> Result<ClassStats> {
    if successes.len() < 2 || failures.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "{} successes and {} failures; both classes need at least two",
            successes.len(),
            failures.len()
        )));
    }
    let (mu1, tr_sigma1) = mean_and_trace(successes)?;
    let (mu0, tr_sigma0) = mean_and_trace(failures)?;
    Ok(ClassStats {
        mu1,
        mu0,
        tr_sigma1,
        tr_sigma0,
        n1: successes.len(),
        n0: failures.len(),
    })
}

/// Class statistics of `traj_score` over every member of `groups`.
pub fn estimate_class_stats(
    world: &GridWorld,
    policy: &PolicyTable,
    groups: &[TrajectoryGroup],
) -> Result<ClassStats> {
    let mut successes = Vec::new();
    let mut failures = Vec::new();
    for group in groups {
        for traj in &group.members {
            let score = policy.traj_score(&traj.tokens(world));
            if traj.success {
                successes.push(score);
            } else {
                failures.push(score);
            }
        }
    }
    class_stats_from_scores(&successes, &failures)
}

/// Draws fresh rollouts and hands out successes and failures on demand, so
/// groups can be assembled with the success count fixed.
#[derive(Debug)]
pub struct ClassSampler<'a> {
    world: &'a GridWorld,
    policy: &'a PolicyTable,
    context: MazeState,
    max_draws: usize,
    draws: usize,
    successes: Vec<Trajectory>,
    failures: Vec<Trajectory>,
}

impl<'a> ClassSampler<'a> {
    pub fn new(world: &'a GridWorld, policy: &'a PolicyTable, context: MazeState, max_draws: usize) -> Self {
        Self {
            world,
            policy,
            context,
            max_draws,
            draws: 0,
            successes: Vec::new(),
            failures: Vec::new(),
        }
    }

    pub fn draws(&self) -> usize {
        self.draws
    }

    fn fill<R: Rng + ?Sized>(&mut self, n1: usize, n0: usize, rng: &mut R) -> Result<()> {
        while self.successes.len() < n1 || self.failures.len() < n0 {
            if self.draws >= self.max_draws {
                return Err(Error::InsufficientData(format!(
                    "{} rollouts gave {} successes and {} failures",
                    self.draws,
                    self.successes.len(),
                    self.failures.len()
                )));
            }
            let traj = self.world.rollout(self.policy, self.context, rng)?;
            self.draws += 1;
            if traj.success {
                self.successes.push(traj);
            } else {
                self.failures.push(traj);
            }
        }
        Ok(())
    }

    /// A group of `k` successes followed by `group_size - k` failures.
    pub fn group<R: Rng + ?Sized>(
        &mut self,
        k: usize,
        group_size: usize,
        eps_norm: f64,
        rng: &mut R,
    ) -> Result<TrajectoryGroup> {
        self.fill(k, group_size - k, rng)?;
        let mut members: Vec<Trajectory> = self.successes.drain(..k).collect();
        members.extend(self.failures.drain(..group_size - k));
        Ok(TrajectoryGroup::from_members(self.context, members, eps_norm))
    }

    /// `n` unconditioned-class samples: `n1` successes and `n0` failures.
    pub fn class_samples<R: Rng + ?Sized>(
        &mut self,
        n1: usize,
        n0: usize,
        rng: &mut R,
    ) -> Result<(Vec<Trajectory>, Vec<Trajectory>)> {
        self.fill(n1, n0, rng)?;
        Ok((self.successes.drain(..n1).collect(), self.failures.drain(..n0).collect()))
    }
}

/// Empirical moments of g_hat over groups with k fixed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalSnr {
    pub k: usize,
    pub n_groups: usize,
    pub mean_norm_sq: f64,
    pub cov_trace: f64,
    /// (|mean|^2 - tr/n) / tr, debiased for the noise in the sample mean.
    pub snr_squared: f64,
}

pub fn empirical_snr(
    world: &GridWorld,
    policy: &PolicyTable,
    groups: &[TrajectoryGroup],
    clip_eps: f64,
) -> Result<EmpiricalSnr> {
    let k = groups.first().map_or(0, TrajectoryGroup::successes);
    if groups.iter().any(|g| g.successes() != k) {
        return Err(Error::InvalidArgument("groups differ in success count".into()));
    }
    let mut grads = Vec::with_capacity(groups.len());
    for group in groups {
        let mut group = group.clone();
        group.normalize();
        grads.push(grpo_gradient(world, policy, policy, &group, clip_eps)?.0);
    }
    let (mean, cov_trace) = mean_and_trace(&grads)?;
    let n = grads.len() as f64;
    let mean_norm_sq = mean.norm_sq();
    Ok(EmpiricalSnr {
        k,
        n_groups: grads.len(),
        mean_norm_sq,
        cov_trace,
        snr_squared: (mean_norm_sq - cov_trace / n) / cov_trace,
    })
}

/// Closed form with plug-in class statistics against the empirical SNR, at one k.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SnrPoint {
    pub k: usize,
    pub group_size: usize,
    pub closed_form: f64,
    pub empirical: f64,
    pub predicted_cov_trace: f64,
    pub empirical_cov_trace: f64,
}

impl SnrPoint {
    pub fn snr_relative_error(&self) -> f64 {
        (self.empirical - self.closed_form).abs() / self.closed_form
    }

    pub fn cov_relative_error(&self) -> f64 {
        (self.empirical_cov_trace - self.predicted_cov_trace).abs() / self.predicted_cov_trace
    }
}

/// Estimates class statistics from `n_class` samples per class, then for each
/// k compares the closed form with `n_groups` conditioned groups.
#[allow(clippy::too_many_arguments)]
pub fn snr_curve<R: Rng + ?Sized>(
    world: &GridWorld,
    policy: &PolicyTable,
    context: MazeState,
    group_size: usize,
    ks: &[usize],
    n_class: usize,
    n_groups: usize,
    clip_eps: f64,
    rng: &mut R,
) -> Result<Vec<SnrPoint>> {
    let mut sampler = ClassSampler::new(world, policy, context, 50_000_000);
    let (s, f) = sampler.class_samples(n_class, n_class, rng)?;
    let score = |t: &Trajectory| policy.traj_score(&t.tokens(world));
    let stats = class_stats_from_scores(
        &s.iter().map(score).collect::<Vec<_>>(),
        &f.iter().map(score).collect::<Vec<_>>(),
    )?;
    let mut out = Vec::with_capacity(ks.len());
    for &k in ks {
        let groups = (0..n_groups)
            .map(|_| sampler.group(k, group_size, 1e-8, rng))
            .collect::<Result<Vec<_>>>()?;
        let emp = empirical_snr(world, policy, &groups, clip_eps)?;
        out.push(SnrPoint {
            k,
            group_size,
            closed_form: snr_squared(&stats.snr_inputs(k, group_size))?,
            empirical: emp.snr_squared,
            predicted_cov_trace: stats.predicted_cov_trace(k, group_size)?,
            empirical_cov_trace: emp.cov_trace,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gridworld::{Action, Cell};
    use crate::policy::StateKey;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn balanced_group() {
        let v = snr_squared(&SnrInputs {
            k: 32,
            group_size: 64,
            mu_diff_norm_sq: 1.0,
            tr_sigma1: 1.0,
            tr_sigma0: 1.0,
        })
        .unwrap();
        assert!((v - 16.0).abs() < 1e-12);
    }

    #[test]
    fn single_success() {
        let v = snr_squared(&SnrInputs {
            k: 1,
            group_size: 64,
            mu_diff_norm_sq: 1.0,
            tr_sigma1: 1.0,
            tr_sigma0: 1.0,
        })
        .unwrap();
        assert!((v - 1.0 / (1.0 + 1.0 / 63.0)).abs() < 1e-12);
        assert!((v - 0.9844).abs() < 1e-4);
    }

    #[test]
    fn degenerate_k_rejected() {
        for k in [0, 8] {
            let r = snr_squared(&SnrInputs {
                k,
                group_size: 8,
                mu_diff_norm_sq: 1.0,
                tr_sigma1: 1.0,
                tr_sigma0: 1.0,
            });
            assert!(matches!(r, Err(Error::DegenerateGroup { .. })));
        }
    }

    /// Sign of SNR^2(k+1) - SNR^2(k) from cross-multiplying the two noise terms.
    fn step_up(k: usize, g: usize, t1: f64, t0: f64) -> bool {
        let (k, g) = (k as f64, g as f64);
        t0 * k * (k + 1.0) < t1 * (g - k) * (g - k - 1.0)
    }

    proptest! {
        #[test]
        fn monotone_exactly_below_the_crossover(
            g in 3usize..128,
            mu in 1e-3f64..10.0,
            t1 in 1e-3f64..10.0,
            t0 in 1e-3f64..10.0,
        ) {
            let at = |k| snr_squared(&SnrInputs {
                k, group_size: g, mu_diff_norm_sq: mu, tr_sigma1: t1, tr_sigma0: t0,
            }).unwrap();
            for k in 1..g - 1 {
                let (a, b) = (at(k), at(k + 1));
                if (b - a).abs() > 1e-12 * a.max(b) {
                    prop_assert_eq!(b > a, step_up(k, g, t1, t0));
                }
            }
        }

        #[test]
        fn increasing_without_failure_noise(
            g in 3usize..128,
            mu in 1e-3f64..10.0,
            t1 in 1e-3f64..10.0,
        ) {
            let at = |k| snr_squared(&SnrInputs {
                k, group_size: g, mu_diff_norm_sq: mu, tr_sigma1: t1, tr_sigma0: 0.0,
            }).unwrap();
            for k in 1..g - 1 {
                prop_assert!(at(k + 1) > at(k));
            }
        }
    }

    #[test]
    fn equal_traces_are_symmetric_in_k() {
        let at = |k| {
            snr_squared(&SnrInputs {
                k,
                group_size: 16,
                mu_diff_norm_sq: 1.0,
                tr_sigma1: 1.0,
                tr_sigma0: 1.0,
            })
            .unwrap()
        };
        for k in 1..16 {
            assert!((at(k) - at(16 - k)).abs() < 1e-12);
        }
        assert!(at(1) < at(8));
    }

    fn planted(mean: f64, sd: f64, n: usize, rng: &mut ChaCha8Rng) -> Vec<ScoreGradient> {
        let noise = Normal::new(0.0, sd).unwrap();
        (0..n)
            .map(|_| {
                let mut g = ScoreGradient::default();
                for a in 0..3 {
                    let shift = if a == 0 { mean } else { 0.0 };
                    g.add_entry(StateKey(0), Action::ALL[a], shift + noise.sample(rng));
                }
                g
            })
            .collect()
    }

    #[test]
    fn planted_class_means_recovered() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 20_000;
        let s = planted(2.0, 1.0, n, &mut rng);
        let f = planted(-1.0, 0.5, n, &mut rng);
        let stats = class_stats_from_scores(&s, &f).unwrap();
        let se1 = 1.0 / (n as f64).sqrt();
        assert!((stats.mu1.get(StateKey(0), Action::N) - 2.0).abs() < 4.0 * se1);
        assert!((stats.mu0.get(StateKey(0), Action::N) + 1.0).abs() < 4.0 * se1);
        // Trace of an isotropic 3-d Gaussian is 3 sd^2.
        assert!((stats.tr_sigma1 - 3.0).abs() < 0.1);
        assert!((stats.tr_sigma0 - 0.75).abs() < 0.03);
        assert!((stats.mu_diff_norm_sq() - 9.0).abs() < 0.2);
    }

    #[test]
    fn identical_classes_have_no_mean_gap() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let n = 20_000;
        let s = planted(0.5, 1.0, n, &mut rng);
        let f = planted(0.5, 1.0, n, &mut rng);
        let stats = class_stats_from_scores(&s, &f).unwrap();
        // E|mean1 - mean0|^2 = 3 * 2 / n.
        assert!(stats.mu_diff_norm_sq() < 10.0 * 6.0 / n as f64);
    }

    #[test]
    fn missing_class_is_insufficient() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = planted(0.0, 1.0, 10, &mut rng);
        assert!(matches!(
            class_stats_from_scores(&s, &[]),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn closed_form_matches_conditioned_groups_on_small_world() {
        let world = GridWorld::open(4, 4, Cell::new(3, 3), 8).unwrap();
        let policy = PolicyTable::uniform(world.num_keys(), 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let points = snr_curve(
            &world,
            &policy,
            MazeState::at(Cell::new(0, 0)),
            8,
            &[2, 4, 6],
            4000,
            1000,
            0.2,
            &mut rng,
        )
        .unwrap();
        for p in &points {
            assert!(p.cov_relative_error() < 0.25, "{p:?}");
            assert!(p.snr_relative_error() < 0.25, "{p:?}");
        }
    }
}

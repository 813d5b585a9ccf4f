//! Analysis runners behind `analyze` and `gradcheck`: each returns a
//! serializable report.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::analysis::{
    gain_experiment, monte_carlo_any_success, policy_drift, scarcity_table, snr_curve, tight_context,
    DriftReport, GainExperiment, GainRecord, ScarcityReport, SnrPoint,
};
use crate::error::{Error, Result};
use crate::gridworld::{Action, GridWorld, MazeState, CANONICAL_FORK};
use crate::grpo::grpo_step;
use crate::harness::config::{ExperimentConfig, Mode};
use crate::harness::protocol::{
    eval_rng, for_each_seed, run_recovery, stream_rng, success_rate, train_rail, Stream,
};
use crate::policy::{PolicyTable, StateKey};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScarcityRow {
    pub report: ScarcityReport,
    pub mc_estimate: f64,
    pub mc_std_error: f64,
    pub mc_groups: usize,
}

impl ScarcityRow {
    /// |estimate - exact| in standard errors.
    pub fn z_score(&self) -> f64 {
        let diff = (self.mc_estimate - self.report.exact_prob).abs();
        if self.mc_std_error == 0.0 {
            if diff == 0.0 { 0.0 } else { f64::INFINITY }
        } else {
            diff / self.mc_std_error
        }
    }
}

/// Exact and Monte-Carlo any-success probabilities over a p x G grid.
pub fn run_scarcity(ps: &[f64], group_sizes: &[usize], mc_groups: usize, seed: u64) -> Result<Vec<ScarcityRow>> {
    let mut rng = stream_rng(seed, Stream::Analysis);
    scarcity_table(ps, group_sizes)?
        .into_iter()
        .map(|report| {
            let (mc_estimate, mc_std_error) =
                monte_carlo_any_success(report.p, report.group_size, mc_groups, &mut rng)?;
            Ok(ScarcityRow {
                report,
                mc_estimate,
                mc_std_error,
                mc_groups,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnrSettings {
    pub group_size: usize,
    pub ks: Vec<usize>,
    pub n_class: usize,
    pub n_groups: usize,
    /// Clean-start success at which rail training is paused for the snapshot.
    pub snapshot_success: f64,
    pub check_every: usize,
    pub check_rollouts: usize,
}

impl Default for SnrSettings {
    fn default() -> Self {
        Self {
            group_size: 8,
            ks: (1..8).collect(),
            n_class: 4000,
            n_groups: 1000,
            snapshot_success: 0.1,
            check_every: 10,
            check_rollouts: 400,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnrRun {
    pub seed: u64,
    pub snapshot_step: usize,
    pub snapshot_success: f64,
    pub points: Vec<SnrPoint>,
}

/// Rail-training policy at the first check whose clean-start success reaches
/// `threshold`, with its step and measured success.
pub fn mid_training_policy(
    world: &GridWorld,
    config: &ExperimentConfig,
    seed: u64,
    threshold: f64,
    check_every: usize,
    check_rollouts: usize,
) -> Result<(PolicyTable, usize, f64)> {
    let clean = MazeState::at(world.clean_start()?);
    let grpo = config.rail_grpo();
    let mut policy = PolicyTable::uniform(world.num_keys(), config.temperature);
    let mut rng = stream_rng(seed, Stream::RailTraining);
    for step in 0..=config.stage1_steps {
        if step % check_every.max(1) == 0 {
            let p = success_rate(world, &policy, clean, check_rollouts, &mut eval_rng(seed, step, 0))?;
            if p >= threshold {
                return Ok((policy, step, p));
            }
        }
        if step < config.stage1_steps {
            grpo_step(&mut policy, world, clean, &grpo, &mut rng)?;
        }
    }
    Err(Error::UnfitBasePolicy(format!(
        "seed {seed}: clean-start success never reached {threshold} in {} steps",
        config.stage1_steps
    )))
}

/// Closed-form against empirical SNR on the clean start, using a policy
/// caught partway through rail training.
pub fn run_snr(config: &ExperimentConfig, seed: u64, settings: &SnrSettings) -> Result<SnrRun> {
    let world = config.world()?;
    let (policy, snapshot_step, snapshot_success) = mid_training_policy(
        &world,
        config,
        seed,
        settings.snapshot_success,
        settings.check_every,
        settings.check_rollouts,
    )?;
    let clean = MazeState::at(world.clean_start()?);
    let points = snr_curve(
        &world,
        &policy,
        clean,
        settings.group_size,
        &settings.ks,
        settings.n_class,
        settings.n_groups,
        config.clip_eps,
        &mut stream_rng(seed, Stream::Analysis),
    )?;
    Ok(SnrRun {
        seed,
        snapshot_step,
        snapshot_success,
        points,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GainSettings {
    /// Guided recovery updates applied to the base policy before measuring.
    pub warmup_steps: usize,
    /// Moves allowed beyond the shortest path from the fork.
    pub slack: usize,
    pub eta: f64,
    pub n_eval: usize,
}

impl Default for GainSettings {
    fn default() -> Self {
        Self {
            warmup_steps: 100,
            slack: 0,
            eta: 0.5,
            n_eval: 20_000,
        }
    }
}

/// One gain record per seed, measured at the canonical fork.
pub fn run_gain(config: &ExperimentConfig, settings: &GainSettings) -> Result<Vec<GainRecord>> {
    config.validate()?;
    let world = config.world()?;
    let context = tight_context(&world, CANONICAL_FORK, settings.slack)?;
    let warmup = ExperimentConfig {
        stage2_steps: settings.warmup_steps,
        ..config.clone()
    };
    for_each_seed(&config.seeds, |seed| {
        let base = train_rail(&world, config, seed)?;
        let run = run_recovery(&world, &warmup, seed, Mode::RecoveryGuided, &base)?;
        let exp = GainExperiment {
            eta: settings.eta,
            n_eval: settings.n_eval,
            ..GainExperiment::new(context)
        };
        gain_experiment(&world, &run.rail, &run.final_policy, &exp, &mut stream_rng(seed, Stream::Analysis))
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftComparison {
    pub seed: u64,
    pub guided: DriftReport,
    pub ood_clone: DriftReport,
    pub guided_final_retention: f64,
    pub ood_clone_final_retention: f64,
}

/// Drift of the guided and the off-distribution cloning runs from the same
/// stage-1 policy, per seed.
pub fn run_drift(config: &ExperimentConfig) -> Result<Vec<DriftComparison>> {
    config.validate()?;
    let world = config.world()?;
    for_each_seed(&config.seeds, |seed| {
        let base = train_rail(&world, config, seed)?;
        let guided = run_recovery(&world, config, seed, Mode::RecoveryGuided, &base)?;
        let ood = run_recovery(&world, config, seed, Mode::RecoveryOodClone, &base)?;
        let retention = |h: &crate::harness::metrics::TrainingHistory| h.last().map_or(f64::NAN, |c| c.retention_rate);
        Ok(DriftComparison {
            seed,
            guided: policy_drift(&world, &base.rail, &base.policy, &guided.final_policy)?,
            ood_clone: policy_drift(&world, &base.rail, &base.policy, &ood.final_policy)?,
            guided_final_retention: retention(&guided.history),
            ood_clone_final_retention: retention(&ood.history),
        })
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub checks: usize,
    pub step: f64,
    pub tolerance: f64,
    pub max_error: f64,
    pub failures: usize,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

/// `n` finite-difference checks on random (policy, state, action) triples with
/// logits drawn from [-2, 2].
pub fn run_gradcheck(n: usize, seed: u64, tolerance: f64) -> Result<GradcheckReport> {
    const ROWS: usize = 16;
    let step = 1e-5;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max_error: f64 = 0.0;
    let mut failures = 0;
    for _ in 0..n {
        let rows = (0..ROWS)
            .map(|_| std::array::from_fn(|_| rng.random_range(-2.0..=2.0)))
            .collect();
        let temperature = rng.random_range(0.5..=2.0);
        let policy = PolicyTable::from_rows(rows, temperature)?;
        let key = StateKey(rng.random_range(0..ROWS));
        let action = Action::ALL[rng.random_range(0..Action::ALL.len())];
        let err = policy.finite_diff_check(key, action, step)?;
        max_error = max_error.max(err);
        if !(err <= tolerance) {
            failures += 1;
        }
    }
    Ok(GradcheckReport {
        checks: n,
        step,
        tolerance,
        max_error,
        failures,
    })
}

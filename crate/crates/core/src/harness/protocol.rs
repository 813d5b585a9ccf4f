//! The two-stage rail/recovery protocol and seeded stream bookkeeping.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::analysis::gain::make_ood_target;
use crate::error::{Error, Result};
use crate::gridworld::{GridWorld, MazeState};
use crate::grpo::grpo_step;
use crate::guidance::{
    compute_rail, guided_step, lambda_schedule, GuidanceSource, RailSet, RepairBuffer, RepairSegment,
};
use crate::harness::config::{ExperimentConfig, Mode};
use crate::harness::metrics::{CheckpointRecord, Role, StepRecord, TrainingHistory};
use crate::policy::PolicyTable;
use crate::selfplay::{alternate_train, PolluterKind, SelfplayRun};

/// Independent generator streams derived from one seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    RailTraining = 1,
    RailExtraction = 2,
    Rollouts = 3,
    Guidance = 4,
    Polluter = 5,
    Alpha = 6,
    Analysis = 7,
}

pub fn stream_rng(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}

/// Generator for the evaluation at `step`, independent of training draws.
pub fn eval_rng(seed: u64, step: usize, start_tag: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (step as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    rng.set_stream(100 + start_tag);
    rng
}

/// Fraction of `n` sampled rollouts from `start` that reach the goal.
pub fn success_rate<R: Rng + ?Sized>(
    world: &GridWorld,
    policy: &PolicyTable,
    start: MazeState,
    n: usize,
    rng: &mut R,
) -> Result<f64> {
    let mut wins = 0usize;
    for _ in 0..n {
        if world.rollout(policy, start, rng)?.success {
            wins += 1;
        }
    }
    Ok(wins as f64 / n as f64)
}

/// The stage-1 product: a base policy and its rail.
#[derive(Debug, Clone)]
pub struct RailOutcome {
    pub policy: PolicyTable,
    pub rail: RailSet,
    pub clean_success: f64,
    pub history: TrainingHistory,
}

/// Trains from the clean start with plain GRPO, then checks the success threshold.
pub fn train_rail(world: &GridWorld, config: &ExperimentConfig, seed: u64) -> Result<RailOutcome> {
    config.validate()?;
    let clean = MazeState::at(world.clean_start()?);
    let grpo = config.rail_grpo();
    let mut policy = PolicyTable::uniform(world.num_keys(), config.temperature);
    let mut rng = stream_rng(seed, Stream::RailTraining);
    let mut history = TrainingHistory::new(Mode::Rail, seed);
    for step in 0..config.stage1_steps {
        let out = grpo_step(&mut policy, world, clean, &grpo, &mut rng)?;
        history.steps.push(StepRecord {
            mode: Mode::Rail,
            seed,
            step,
            role: Role::Agent,
            k: out.stats.k,
            group_size: out.stats.group_size,
            mean_reward: out.stats.mean_reward,
            grad_norm: out.stats.gradient_norm,
            guide_grad_norm: 0.0,
            lambda: 0.0,
            buffer_size: 0,
            harvested: 0,
            alpha: None,
        });
    }
    let mut eval = eval_rng(seed, config.stage1_steps, 0);
    let clean_success = success_rate(world, &policy, clean, config.stage1_eval_rollouts, &mut eval)?;
    history.checkpoints.push(CheckpointRecord {
        mode: Mode::Rail,
        seed,
        step: config.stage1_steps,
        success_rate: clean_success,
        retention_rate: clean_success,
        polluter_win_rate: None,
        recovery_rate: None,
        grad_norm: history.steps.last().map_or(0.0, |s| s.grad_norm),
        guide_grad_norm: 0.0,
        lambda: 0.0,
        buffer_size: 0,
    });
    if clean_success < config.stage1_threshold {
        return Err(Error::UnfitBasePolicy(format!(
            "seed {seed}: clean-start success {clean_success:.3} after {} steps is below {}",
            config.stage1_steps, config.stage1_threshold
        )));
    }
    let rail = compute_rail(
        world,
        &policy,
        clean.cell,
        config.rail_rollouts,
        &mut stream_rng(seed, Stream::RailExtraction),
    )?;
    Ok(RailOutcome {
        policy,
        rail,
        clean_success,
        history,
    })
}

/// Result of one seed's recovery stage.
#[derive(Debug, Clone)]
pub struct SeedRun {
    pub history: TrainingHistory,
    pub base_policy: PolicyTable,
    pub final_policy: PolicyTable,
    pub rail: RailSet,
    pub buffer: Option<RepairBuffer>,
    pub target: Option<RepairSegment>,
}

fn checkpoint(
    world: &GridWorld,
    config: &ExperimentConfig,
    policy: &PolicyTable,
    mode: Mode,
    seed: u64,
    step: usize,
    last: Option<&StepRecord>,
) -> Result<CheckpointRecord> {
    let clean = MazeState::at(world.clean_start()?);
    let misleading = MazeState::at(world.misleading_start()?);
    let n = config.eval_rollouts;
    Ok(CheckpointRecord {
        mode,
        seed,
        step,
        success_rate: success_rate(world, policy, misleading, n, &mut eval_rng(seed, step, 1))?,
        retention_rate: success_rate(world, policy, clean, n, &mut eval_rng(seed, step, 0))?,
        polluter_win_rate: None,
        recovery_rate: None,
        grad_norm: last.map_or(0.0, |s| s.grad_norm),
        guide_grad_norm: last.map_or(0.0, |s| s.guide_grad_norm),
        lambda: last.map_or(0.0, |s| s.lambda),
        buffer_size: last.map_or(0, |s| s.buffer_size),
    })
}

/// Stage 2 from the misleading start with the method selected by `mode`.
pub fn run_recovery(
    world: &GridWorld,
    config: &ExperimentConfig,
    seed: u64,
    mode: Mode,
    base: &RailOutcome,
) -> Result<SeedRun> {
    config.validate()?;
    let misleading = MazeState::at(world.misleading_start()?);
    if base.rail.contains(misleading.cell) {
        return Err(Error::UnfitBasePolicy(format!(
            "misleading start {} lies on the rail",
            misleading.cell
        )));
    }
    let grpo = config.grpo();
    let guidance = config.guidance();
    guidance.validate()?;
    let mut buffer = RepairBuffer::new(guidance.buffer_capacity);
    let target = match mode {
        Mode::RecoveryOodClone => Some(make_ood_target(
            world,
            &base.rail,
            &base.policy,
            misleading,
            config.ood_likelihood_ratio,
        )?),
        Mode::RecoveryGrpo | Mode::RecoveryGuided => None,
        other => {
            return Err(Error::InvalidArgument(format!("{other} is not a recovery mode")));
        }
    };
    let mut policy = base.policy.clone();
    let mut rollout_rng = stream_rng(seed, Stream::Rollouts);
    let mut guide_rng = stream_rng(seed, Stream::Guidance);
    let mut history = TrainingHistory::new(mode, seed);
    let total = config.stage2_steps;
    for step in 0..=total {
        if step % config.eval_every == 0 || step == total {
            let cp = checkpoint(world, config, &policy, mode, seed, step, history.steps.last())?;
            history.checkpoints.push(cp);
        }
        if step == total {
            break;
        }
        let lambda = match mode {
            Mode::RecoveryGrpo => 0.0,
            _ => lambda_schedule(step, total, &guidance),
        };
        let source = match (mode, &target) {
            (Mode::RecoveryGuided, _) => GuidanceSource::Harvested {
                buffer: &mut buffer,
                rail: &base.rail,
            },
            (Mode::RecoveryOodClone, Some(t)) => GuidanceSource::Fixed(t),
            _ => GuidanceSource::None,
        };
        let out = guided_step(
            &mut policy,
            world,
            misleading,
            &grpo,
            source,
            lambda,
            guidance.minibatch_size,
            step,
            &mut rollout_rng,
            &mut guide_rng,
        )?;
        history.steps.push(StepRecord {
            mode,
            seed,
            step,
            role: Role::Agent,
            k: out.grpo.stats.k,
            group_size: out.grpo.stats.group_size,
            mean_reward: out.grpo.stats.mean_reward,
            grad_norm: out.grpo.stats.gradient_norm,
            guide_grad_norm: out.guide_grad_norm,
            lambda: out.lambda,
            buffer_size: out.buffer_size,
            harvested: out.harvested,
            alpha: None,
        });
    }
    Ok(SeedRun {
        history,
        base_policy: base.policy.clone(),
        final_policy: policy,
        rail: base.rail.clone(),
        buffer: (mode == Mode::RecoveryGuided).then_some(buffer),
        target,
    })
}

/// Stage 1 followed by stage 2 for every configured seed. Seeds run on
/// separate threads; results come back in seed order.
pub fn run_two_stage(config: &ExperimentConfig) -> Result<Vec<SeedRun>> {
    config.validate()?;
    let world = config.world()?;
    let mode = match config.mode {
        Mode::RecoveryGrpo | Mode::RecoveryGuided | Mode::RecoveryOodClone => config.mode,
        other => {
            return Err(Error::InvalidArgument(format!("{other} is not a recovery mode")));
        }
    };
    for_each_seed(&config.seeds, |seed| {
        let base = train_rail(&world, config, seed)?;
        run_recovery(&world, config, seed, mode, &base)
    })
}

/// Stage 1 followed by blocked self-play for every configured seed. The
/// polluter is sampled but never updated when `freeze_polluter` is set.
pub fn run_selfplay(config: &ExperimentConfig) -> Result<Vec<SelfplayRun>> {
    config.validate()?;
    let world = config.world()?;
    let kind = if config.freeze_polluter {
        PolluterKind::Frozen
    } else {
        PolluterKind::Adaptive
    };
    for_each_seed(&config.seeds, |seed| {
        let base = train_rail(&world, config, seed)?;
        alternate_train(&world, config, seed, &base, kind)
    })
}

/// Runs `job` once per seed in parallel, preserving order.
pub fn for_each_seed<T, F>(seeds: &[u64], job: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(u64) -> Result<T> + Sync,
{
    std::thread::scope(|scope| {
        let handles: Vec<_> = seeds
            .iter()
            .map(|&seed| {
                let job = &job;
                scope.spawn(move || job(seed))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("seed worker panicked"))
            .collect()
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> ExperimentConfig {
        ExperimentConfig {
            stage2_steps: 0,
            seeds: vec![5],
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn zero_stage_two_steps_gives_initial_checkpoint_only() {
        let config = small_config();
        let runs = run_two_stage(&config).unwrap();
        let h = &runs[0].history;
        assert_eq!(h.checkpoints.len(), 1);
        assert_eq!(h.checkpoints[0].step, 0);
        assert!(h.steps.is_empty());
    }

    #[test]
    fn checkpoint_rates_are_multiples_of_a_tenth() {
        let config = ExperimentConfig {
            stage2_steps: 30,
            ..small_config()
        };
        let runs = run_two_stage(&config).unwrap();
        let h = &runs[0].history;
        assert_eq!(
            h.checkpoints.iter().map(|c| c.step).collect::<Vec<_>>(),
            vec![0, 10, 20, 30]
        );
        for c in &h.checkpoints {
            for rate in [c.success_rate, c.retention_rate] {
                assert!(((rate * 10.0) - (rate * 10.0).round()).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn undertrained_base_is_rejected() {
        let config = ExperimentConfig {
            stage1_steps: 0,
            ..small_config()
        };
        assert!(matches!(run_two_stage(&config), Err(Error::UnfitBasePolicy(_))));
    }

    #[test]
    fn zero_selfplay_steps_gives_initial_checkpoint_only() {
        let config = ExperimentConfig {
            selfplay_steps: 0,
            ..small_config()
        };
        let runs = run_selfplay(&config).unwrap();
        let h = &runs[0].history;
        assert_eq!(h.checkpoints.len(), 1);
        assert!(h.steps.is_empty());
        assert_eq!(h.checkpoints[0].polluter_win_rate, None);
        assert!(h.checkpoints[0].recovery_rate.is_some());
    }

    #[test]
    fn non_recovery_mode_rejected() {
        let config = ExperimentConfig {
            mode: Mode::Selfplay,
            ..small_config()
        };
        assert!(run_two_stage(&config).is_err());
    }
}

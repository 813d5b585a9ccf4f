//! Adversarial polluter: corruption windows cut from rail trajectories, the
//! polluter's outcome reward, its GRPO update, and blocked alternation with
//! the agent.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gridworld::{Action, GridWorld, MazeState, Trajectory};
use crate::grpo::{clipped_surrogate_gradient, group_advantages, stats_for, GrpoConfig, GrpoStats};
use crate::guidance::{guided_step, lambda_schedule, GuidanceSource, RailSet, RepairBuffer};
use crate::harness::config::{ExperimentConfig, Mode};
use crate::harness::metrics::{CheckpointRecord, Role, StepRecord, TrainingHistory};
use crate::harness::protocol::{eval_rng, stream_rng, success_rate, RailOutcome, Stream};
use crate::policy::{PolicyTable, StateKey, Token};

/// Truncation fractions a corruption may start at.
pub const ALPHAS: [f64; 4] = [0.0, 0.25, 0.5, 0.75];

/// Window length for a rail trajectory of `rail_len` moves: ceil(0.1 * len), at least 1.
pub fn window_len(rail_len: usize) -> usize {
    rail_len.div_ceil(10).max(1)
}

/// floor(alpha * rail_len).
pub fn truncation_index(rail_len: usize, alpha: f64) -> usize {
    ((alpha * rail_len as f64).floor() as usize).min(rail_len)
}

fn check_alpha(alpha: f64) -> Result<()> {
    if ALPHAS.contains(&alpha) {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "truncation fraction {alpha} is not one of {ALPHAS:?}"
        )))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorruptionWindow {
    pub alpha: f64,
    pub moves: Vec<Action>,
}

impl CorruptionWindow {
    pub fn new(alpha: f64, moves: Vec<Action>) -> Result<Self> {
        check_alpha(alpha)?;
        if moves.is_empty() {
            return Err(Error::InvalidArgument("corruption window is empty".into()));
        }
        Ok(Self { alpha, moves })
    }

    pub fn len(&self) -> usize {
        self.moves.len()
    }

    pub fn is_empty(&self) -> bool {
        self.moves.is_empty()
    }

    /// The rail trajectory's own next `m` moves; padded with its last move
    /// when the trajectory reaches the goal first.
    pub fn clean(rail_traj: &Trajectory, alpha: f64, m: usize) -> Result<Self> {
        let t = truncation_index(rail_traj.len(), alpha);
        let last = *rail_traj
            .moves
            .last()
            .ok_or_else(|| Error::InvalidArgument("rail trajectory has no moves".into()))?;
        let moves = (0..m)
            .map(|i| rail_traj.moves.get(t + i).copied().unwrap_or(last))
            .collect();
        Self::new(alpha, moves)
    }
}

/// A start state produced by following a rail trajectory for a prefix and
/// then playing a corruption window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PollutedStart {
    pub rail_id: usize,
    pub truncation_index: usize,
    pub window: CorruptionWindow,
    pub resolved_state: MazeState,
    pub remaining_horizon: usize,
}

/// Walks `rail_traj` to its truncation index, then applies the window moves.
/// Moves after the goal is reached are dropped.
pub fn make_polluted_start(
    world: &GridWorld,
    rail_id: usize,
    rail_traj: &Trajectory,
    window: &CorruptionWindow,
) -> Result<PollutedStart> {
    check_alpha(window.alpha)?;
    if !rail_traj.success {
        return Err(Error::InvalidArgument(
            "rail trajectory does not reach the goal".into(),
        ));
    }
    let t = truncation_index(rail_traj.len(), window.alpha);
    let truncated = rail_traj.states[t];
    let remaining = world.horizon().saturating_sub(truncated.steps_taken);
    if window.len() > remaining {
        return Err(Error::InvalidArgument(format!(
            "window of {} moves exceeds the remaining horizon {remaining}",
            window.len()
        )));
    }
    let resolved_state = world.replay(truncated, &window.moves)?.final_state();
    Ok(PollutedStart {
        rail_id,
        truncation_index: t,
        window: window.clone(),
        resolved_state,
        remaining_horizon: world.horizon() - resolved_state.steps_taken,
    })
}

/// Polluter head: one row per (truncation cell, position in window).
#[derive(Debug, Clone, PartialEq)]
pub struct PolluterPolicy {
    pub table: PolicyTable,
    pub window_len: usize,
}

impl PolluterPolicy {
    pub fn uniform(world: &GridWorld, window_len: usize, temperature: f64) -> Result<Self> {
        if window_len == 0 {
            return Err(Error::InvalidArgument("window length must be positive".into()));
        }
        Ok(Self {
            table: PolicyTable::uniform(world.num_keys() * window_len, temperature),
            window_len,
        })
    }

    pub fn key(&self, world: &GridWorld, state: MazeState, position: usize) -> StateKey {
        StateKey(world.key(state.cell).0 * self.window_len + position)
    }

    pub fn window_tokens(&self, world: &GridWorld, state: MazeState, moves: &[Action]) -> Vec<Token> {
        moves
            .iter()
            .enumerate()
            .map(|(i, &a)| Token::new(self.key(world, state, i), a))
            .collect()
    }
}

/// Samples `m` position-conditioned moves for the truncation state.
pub fn sample_corruption<R: Rng + ?Sized>(
    world: &GridWorld,
    polluter: &PolluterPolicy,
    truncation_state: MazeState,
    alpha: f64,
    rng: &mut R,
) -> Result<CorruptionWindow> {
    let moves = (0..polluter.window_len)
        .map(|i| {
            polluter
                .table
                .sample_action(polluter.key(world, truncation_state, i), rng)
        })
        .collect();
    CorruptionWindow::new(alpha, moves)
}

/// 1 when the agent failed, 0 when it succeeded.
pub fn polluter_reward(agent_success: bool) -> f64 {
    if agent_success {
        0.0
    } else {
        1.0
    }
}

#[derive(Debug, Clone)]
pub struct PolluterOutcome {
    pub stats: GrpoStats,
    pub starts: Vec<PollutedStart>,
    pub agent_success: Vec<bool>,
    pub rewards: Vec<f64>,
    pub gradient_norm: f64,
}

impl PolluterOutcome {
    pub fn win_rate(&self) -> f64 {
        self.rewards.iter().sum::<f64>() / self.rewards.len() as f64
    }
}

/// One polluter update: `config.group_size` windows from one truncation
/// context, a single agent rollout per window, GRPO on the polluter reward.
/// When `update` is false the group is scored but the polluter is left as is.
#[allow(clippy::too_many_arguments)]
pub fn polluter_step<R: Rng + ?Sized>(
    polluter: &mut PolluterPolicy,
    agent: &PolicyTable,
    world: &GridWorld,
    rail_id: usize,
    rail_traj: &Trajectory,
    alpha: f64,
    config: &GrpoConfig,
    update: bool,
    rng: &mut R,
) -> Result<PolluterOutcome> {
    config.validate()?;
    check_alpha(alpha)?;
    let truncated = rail_traj.states[truncation_index(rail_traj.len(), alpha)];
    let mut starts = Vec::with_capacity(config.group_size);
    let mut sequences = Vec::with_capacity(config.group_size);
    let mut agent_success = Vec::with_capacity(config.group_size);
    for _ in 0..config.group_size {
        let window = sample_corruption(world, polluter, truncated, alpha, rng)?;
        let start = make_polluted_start(world, rail_id, rail_traj, &window)?;
        agent_success.push(world.rollout(agent, start.resolved_state, rng)?.success);
        sequences.push(polluter.window_tokens(world, truncated, &window.moves));
        starts.push(start);
    }
    let rewards: Vec<f64> = agent_success.iter().map(|&s| polluter_reward(s)).collect();
    let advantages = group_advantages(&rewards, config.eps_norm);
    let (gradient, clipped) =
        clipped_surrogate_gradient(&polluter.table, &polluter.table, &sequences, &advantages, config.clip_eps)?;
    let gradient_norm = gradient.norm();
    if update {
        polluter.table.apply_update(&gradient, config.lr)?;
    }
    Ok(PolluterOutcome {
        stats: stats_for(&rewards, &advantages, gradient_norm, clipped),
        starts,
        agent_success,
        rewards,
        gradient_norm,
    })
}

/// Role of update `step` under blocks of `block_len` agent then polluter steps.
pub fn role_at(step: usize, block_len: usize) -> Role {
    if (step / block_len.max(1)).is_multiple_of(2) {
        Role::Agent
    } else {
        Role::Polluter
    }
}

/// How the polluter behaves during alternation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolluterKind {
    /// Trained on its own reward.
    Adaptive,
    /// Sampled but never updated.
    Frozen,
    /// Replays the rail's own moves.
    Identity,
}

/// Successful clean-start rollouts from `n` attempts.
pub fn collect_rail_trajectories<R: Rng + ?Sized>(
    world: &GridWorld,
    policy: &PolicyTable,
    n: usize,
    rng: &mut R,
) -> Result<Vec<Trajectory>> {
    let clean = MazeState::at(world.clean_start()?);
    let mut out = Vec::new();
    for _ in 0..n {
        let traj = world.rollout(policy, clean, rng)?;
        if traj.success && !traj.is_empty() {
            out.push(traj);
        }
    }
    if out.is_empty() {
        return Err(Error::UnfitBasePolicy(format!(
            "no successful clean-start rollout in {n} attempts"
        )));
    }
    Ok(out)
}

/// Every window of `m` moves, in lexicographic action order.
pub fn all_windows(m: usize) -> Result<Vec<Vec<Action>>> {
    if m == 0 || m > 4 {
        return Err(Error::InvalidArgument(format!(
            "cannot enumerate windows of length {m}"
        )));
    }
    let mut out: Vec<Vec<Action>> = vec![Vec::new()];
    for _ in 0..m {
        out = out
            .into_iter()
            .flat_map(|w| {
                Action::ALL.into_iter().map(move |a| {
                    let mut next = w.clone();
                    next.push(a);
                    next
                })
            })
            .collect();
    }
    Ok(out)
}

/// Fixed evaluation corruptions: for each truncation fraction, the window
/// whose resolved state the base policy recovers from least often.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeldOutSuite {
    pub starts: Vec<PollutedStart>,
    pub base_success: Vec<f64>,
}

impl HeldOutSuite {
    pub fn build<R: Rng + ?Sized>(
        world: &GridWorld,
        base: &PolicyTable,
        rail_id: usize,
        rail_traj: &Trajectory,
        m: usize,
        n_rollouts: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let windows = all_windows(m)?;
        let mut starts = Vec::new();
        let mut base_success = Vec::new();
        for alpha in ALPHAS {
            let mut seen: Vec<(MazeState, f64)> = Vec::new();
            let mut worst: Option<(PollutedStart, f64)> = None;
            for moves in &windows {
                let window = CorruptionWindow::new(alpha, moves.clone())?;
                let start = make_polluted_start(world, rail_id, rail_traj, &window)?;
                let rate = match seen.iter().find(|(s, _)| *s == start.resolved_state) {
                    Some(&(_, r)) => r,
                    None => {
                        let r = success_rate(world, base, start.resolved_state, n_rollouts, rng)?;
                        seen.push((start.resolved_state, r));
                        r
                    }
                };
                if worst.as_ref().is_none_or(|(_, w)| rate < *w) {
                    worst = Some((start, rate));
                }
            }
            let (start, rate) = worst.expect("window set is nonempty");
            starts.push(start);
            base_success.push(rate);
        }
        Ok(Self {
            starts,
            base_success,
        })
    }

    /// Mean success of `policy` over the suite, `n_rollouts` per start.
    pub fn recovery<R: Rng + ?Sized>(
        &self,
        world: &GridWorld,
        policy: &PolicyTable,
        n_rollouts: usize,
        rng: &mut R,
    ) -> Result<f64> {
        let mut total = 0.0;
        for start in &self.starts {
            total += success_rate(world, policy, start.resolved_state, n_rollouts, rng)?;
        }
        Ok(total / self.starts.len() as f64)
    }
}

#[derive(Debug, Clone)]
pub struct SelfplayRun {
    pub history: TrainingHistory,
    pub kind: PolluterKind,
    pub base_policy: PolicyTable,
    pub agent: PolicyTable,
    pub polluter: PolluterPolicy,
    pub rail: RailSet,
    pub buffer: RepairBuffer,
    pub suite: HeldOutSuite,
    /// Held-out suite recovery of the final agent, `rail_rollouts` per start.
    pub final_recovery: f64,
}

/// Agent success on the polluted starts of a step record: the agent's mean
/// reward on its own steps, one minus the polluter's reward otherwise.
pub fn agent_recovery_rate(record: &StepRecord) -> f64 {
    match record.role {
        Role::Agent => record.mean_reward,
        Role::Polluter => 1.0 - record.mean_reward,
    }
}

fn quarter_means(values: &[f64]) -> Result<[f64; 4]> {
    let n = values.len();
    if n < 4 {
        return Err(Error::InsufficientData(format!(
            "{n} values cannot be split into quarters"
        )));
    }
    let mut out = [0.0; 4];
    for (q, slot) in out.iter_mut().enumerate() {
        let part = &values[q * n / 4..(q + 1) * n / 4];
        *slot = part.iter().sum::<f64>() / part.len() as f64;
    }
    Ok(out)
}

/// Mean agent success under the training-time windows, per quarter of the run.
pub fn adversarial_recovery_by_quarter(history: &TrainingHistory) -> Result<[f64; 4]> {
    let values: Vec<f64> = history.steps.iter().map(agent_recovery_rate).collect();
    quarter_means(&values)
}

/// Mean held-out suite recovery over the checkpoints in each quarter.
pub fn held_out_recovery_by_quarter(history: &TrainingHistory) -> Result<[f64; 4]> {
    let values: Vec<f64> = history
        .checkpoints
        .iter()
        .filter_map(|c| c.recovery_rate)
        .collect();
    quarter_means(&values)
}

/// Polluter win rate of each completed polluter block.
pub fn block_win_rates(history: &TrainingHistory) -> Vec<f64> {
    let mut out = Vec::new();
    let mut current: Vec<f64> = Vec::new();
    for record in &history.steps {
        if record.role == Role::Polluter {
            current.push(record.mean_reward);
        } else if !current.is_empty() {
            out.push(current.iter().sum::<f64>() / current.len() as f64);
            current.clear();
        }
    }
    if !current.is_empty() {
        out.push(current.iter().sum::<f64>() / current.len() as f64);
    }
    out
}

fn selfplay_checkpoint(
    world: &GridWorld,
    config: &ExperimentConfig,
    agent: &PolicyTable,
    suite: &HeldOutSuite,
    seed: u64,
    step: usize,
    last: Option<&StepRecord>,
) -> Result<CheckpointRecord> {
    let clean = MazeState::at(world.clean_start()?);
    let misleading = MazeState::at(world.misleading_start()?);
    let n = config.eval_rollouts;
    Ok(CheckpointRecord {
        mode: Mode::Selfplay,
        seed,
        step,
        success_rate: success_rate(world, agent, misleading, n, &mut eval_rng(seed, step, 1))?,
        retention_rate: success_rate(world, agent, clean, n, &mut eval_rng(seed, step, 0))?,
        polluter_win_rate: last.map(|r| 1.0 - agent_recovery_rate(r)),
        recovery_rate: Some(suite.recovery(world, agent, n, &mut eval_rng(seed, step, 2))?),
        grad_norm: last.map_or(0.0, |s| s.grad_norm),
        guide_grad_norm: last.map_or(0.0, |s| s.guide_grad_norm),
        lambda: last.map_or(0.0, |s| s.lambda),
        buffer_size: last.map_or(0, |s| s.buffer_size),
    })
}

/// Blocked alternation of guided agent steps on polluted starts and polluter
/// steps, starting from the stage-1 policy in `base`.
pub fn alternate_train(
    world: &GridWorld,
    config: &ExperimentConfig,
    seed: u64,
    base: &RailOutcome,
    kind: PolluterKind,
) -> Result<SelfplayRun> {
    config.validate()?;
    let agent_grpo = config.grpo();
    let polluter_grpo = config.polluter_grpo();
    let guidance = config.guidance();
    guidance.validate()?;

    let rails = collect_rail_trajectories(
        world,
        &base.policy,
        config.rail_rollouts,
        &mut stream_rng(seed, Stream::RailExtraction),
    )?;
    let m = window_len(rails[0].len());
    let suite = HeldOutSuite::build(
        world,
        &base.policy,
        0,
        &rails[0],
        m,
        config.rail_rollouts,
        &mut stream_rng(seed, Stream::Analysis),
    )?;
    let mut polluter = PolluterPolicy::uniform(world, m, config.temperature)?;
    let mut agent = base.policy.clone();
    let mut buffer = RepairBuffer::new(guidance.buffer_capacity);

    let mut alpha_rng = stream_rng(seed, Stream::Alpha);
    let mut polluter_rng = stream_rng(seed, Stream::Polluter);
    let mut rollout_rng = stream_rng(seed, Stream::Rollouts);
    let mut guide_rng = stream_rng(seed, Stream::Guidance);

    let total = config.selfplay_steps;
    let agent_total = (0..total)
        .filter(|&s| role_at(s, config.block_len) == Role::Agent)
        .count();
    let mut agent_steps = 0usize;
    let mut history = TrainingHistory::new(Mode::Selfplay, seed);

    for step in 0..=total {
        if step % config.eval_every == 0 || step == total {
            let cp = selfplay_checkpoint(world, config, &agent, &suite, seed, step, history.steps.last())?;
            history.checkpoints.push(cp);
        }
        if step == total {
            break;
        }
        let alpha = ALPHAS[alpha_rng.random_range(0..ALPHAS.len())];
        let rail_id = alpha_rng.random_range(0..rails.len());
        let rail_traj = &rails[rail_id];
        let role = role_at(step, config.block_len);
        let record = match role {
            Role::Agent => {
                let window = match kind {
                    PolluterKind::Identity => CorruptionWindow::clean(rail_traj, alpha, m)?,
                    PolluterKind::Adaptive | PolluterKind::Frozen => {
                        let t = truncation_index(rail_traj.len(), alpha);
                        sample_corruption(world, &polluter, rail_traj.states[t], alpha, &mut polluter_rng)?
                    }
                };
                let start = make_polluted_start(world, rail_id, rail_traj, &window)?;
                let lambda = lambda_schedule(agent_steps, agent_total, &guidance);
                let out = guided_step(
                    &mut agent,
                    world,
                    start.resolved_state,
                    &agent_grpo,
                    GuidanceSource::Harvested {
                        buffer: &mut buffer,
                        rail: &base.rail,
                    },
                    lambda,
                    guidance.minibatch_size,
                    step,
                    &mut rollout_rng,
                    &mut guide_rng,
                )?;
                agent_steps += 1;
                StepRecord {
                    mode: Mode::Selfplay,
                    seed,
                    step,
                    role,
                    k: out.grpo.stats.k,
                    group_size: out.grpo.stats.group_size,
                    mean_reward: out.grpo.stats.mean_reward,
                    grad_norm: out.grpo.stats.gradient_norm,
                    guide_grad_norm: out.guide_grad_norm,
                    lambda: out.lambda,
                    buffer_size: out.buffer_size,
                    harvested: out.harvested,
                    alpha: Some(alpha),
                }
            }
            Role::Polluter => {
                let out = match kind {
                    PolluterKind::Identity => {
                        identity_group(world, &agent, rail_id, rail_traj, alpha, m, &polluter_grpo, &mut polluter_rng)?
                    }
                    PolluterKind::Adaptive | PolluterKind::Frozen => polluter_step(
                        &mut polluter,
                        &agent,
                        world,
                        rail_id,
                        rail_traj,
                        alpha,
                        &polluter_grpo,
                        kind == PolluterKind::Adaptive,
                        &mut polluter_rng,
                    )?,
                };
                check_complement(&out)?;
                StepRecord {
                    mode: Mode::Selfplay,
                    seed,
                    step,
                    role,
                    k: out.stats.k,
                    group_size: out.stats.group_size,
                    mean_reward: out.stats.mean_reward,
                    grad_norm: out.gradient_norm,
                    guide_grad_norm: 0.0,
                    lambda: 0.0,
                    buffer_size: buffer.len(),
                    harvested: 0,
                    alpha: Some(alpha),
                }
            }
        };
        history.steps.push(record);
    }
    let final_recovery =
        suite.recovery(world, &agent, config.rail_rollouts, &mut eval_rng(seed, total, 3))?;
    Ok(SelfplayRun {
        history,
        kind,
        base_policy: base.policy.clone(),
        agent,
        polluter,
        rail: base.rail.clone(),
        buffer,
        suite,
        final_recovery,
    })
}

/// One row of the self-play history CSV.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelfplayRow {
    pub seed: u64,
    pub step: usize,
    pub role: Role,
    pub alpha: f64,
    pub polluter_win_rate: f64,
    pub agent_recovery_rate: f64,
    pub grad_norm: f64,
    pub guide_grad_norm: f64,
}

impl SelfplayRow {
    pub fn from_record(record: &StepRecord) -> Self {
        let recovery = agent_recovery_rate(record);
        Self {
            seed: record.seed,
            step: record.step,
            role: record.role,
            alpha: record.alpha.unwrap_or(f64::NAN),
            polluter_win_rate: 1.0 - recovery,
            agent_recovery_rate: recovery,
            grad_norm: record.grad_norm,
            guide_grad_norm: record.guide_grad_norm,
        }
    }
}

/// Columns: seed, step, role, alpha, polluter_win_rate, agent_recovery_rate,
/// grad_norm, guide_grad_norm.
pub fn write_selfplay_csv<'a, W: std::io::Write>(
    out: W,
    histories: impl IntoIterator<Item = &'a TrainingHistory>,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for h in histories {
        for record in &h.steps {
            w.serialize(SelfplayRow::from_record(record))?;
        }
    }
    w.flush()?;
    Ok(())
}

fn check_complement(out: &PolluterOutcome) -> Result<()> {
    let ok = out.rewards.len() == out.agent_success.len()
        && out
            .rewards
            .iter()
            .zip(&out.agent_success)
            .all(|(&r, &s)| r == 1.0 - if s { 1.0 } else { 0.0 });
    if ok {
        Ok(())
    } else {
        Err(Error::InvalidState(
            "polluter rewards are not the complement of agent success".into(),
        ))
    }
}

#[allow(clippy::too_many_arguments)]
fn identity_group<R: Rng + ?Sized>(
    world: &GridWorld,
    agent: &PolicyTable,
    rail_id: usize,
    rail_traj: &Trajectory,
    alpha: f64,
    m: usize,
    config: &GrpoConfig,
    rng: &mut R,
) -> Result<PolluterOutcome> {
    let window = CorruptionWindow::clean(rail_traj, alpha, m)?;
    let start = make_polluted_start(world, rail_id, rail_traj, &window)?;
    let mut agent_success = Vec::with_capacity(config.group_size);
    for _ in 0..config.group_size {
        agent_success.push(world.rollout(agent, start.resolved_state, rng)?.success);
    }
    let rewards: Vec<f64> = agent_success.iter().map(|&s| polluter_reward(s)).collect();
    let advantages = group_advantages(&rewards, config.eps_norm);
    Ok(PolluterOutcome {
        stats: stats_for(&rewards, &advantages, 0.0, 0.0),
        starts: vec![start; config.group_size],
        agent_success,
        rewards,
        gradient_norm: 0.0,
    })
}

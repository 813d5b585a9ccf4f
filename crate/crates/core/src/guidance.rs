//! Rail extraction, repair harvesting and the behavioral-cloning guidance term.
//!
//! The rail is the set of cells the base policy visits on successful clean-start
//! rollouts. A repair segment is an on-policy path from an off-rail state up to
//! and including the first move that lands back on the rail.

use std::collections::{BTreeSet, VecDeque};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gridworld::{Action, Cell, GridWorld, MazeState, Trajectory};
use crate::grpo::{grpo_gradient, sample_group, GrpoConfig, GrpoOutcome};
use crate::policy::{PolicyTable, ScoreGradient, Token};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RailSet {
    cells: BTreeSet<Cell>,
}

impl RailSet {
    pub fn from_cells(cells: impl IntoIterator<Item = Cell>) -> Result<Self> {
        let cells: BTreeSet<Cell> = cells.into_iter().collect();
        if cells.is_empty() {
            return Err(Error::InvalidArgument("rail set must be nonempty".into()));
        }
        Ok(Self { cells })
    }

    pub fn contains(&self, cell: Cell) -> bool {
        self.cells.contains(&cell)
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn cells(&self) -> impl Iterator<Item = Cell> + '_ {
        self.cells.iter().copied()
    }

    /// Cells in exactly one of the two sets.
    pub fn symmetric_difference(&self, other: &RailSet) -> usize {
        self.cells.symmetric_difference(&other.cells).count()
    }
}

/// Union of cells visited by the successful rollouts among `n_rollouts`.
pub fn compute_rail<R: Rng + ?Sized>(
    world: &GridWorld,
    base_policy: &PolicyTable,
    clean_start: Cell,
    n_rollouts: usize,
    rng: &mut R,
) -> Result<RailSet> {
    let start = MazeState::at(clean_start);
    let mut cells = BTreeSet::new();
    let mut successes = 0;
    for _ in 0..n_rollouts {
        let traj = world.rollout(base_policy, start, rng)?;
        if traj.success {
            successes += 1;
            cells.extend(traj.states.iter().map(|s| s.cell));
        }
    }
    if successes == 0 {
        return Err(Error::UnfitBasePolicy(format!(
            "no successful clean-start rollout in {n_rollouts} attempts"
        )));
    }
    RailSet::from_cells(cells)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepairSegment {
    /// States the actions were taken from; `states[0]` is off the rail.
    pub states: Vec<MazeState>,
    pub moves: Vec<Action>,
    /// The on-rail state the final move lands in.
    pub end: MazeState,
    pub harvest_step: usize,
    /// Sum of per-step log-probabilities under the policy at harvest time.
    pub harvest_log_likelihood: f64,
}

impl RepairSegment {
    /// Builds a segment from an explicit start and move list, checking the
    /// segment invariants against `rail`.
    pub fn from_moves(
        world: &GridWorld,
        rail: &RailSet,
        start: MazeState,
        moves: &[Action],
    ) -> Result<Self> {
        if moves.is_empty() {
            return Err(Error::Repair("segment needs at least one move".into()));
        }
        if rail.contains(start.cell) {
            return Err(Error::Repair(format!("segment starts on the rail at {}", start.cell)));
        }
        let mut states = Vec::with_capacity(moves.len());
        let mut state = start;
        for (i, &a) in moves.iter().enumerate() {
            if i > 0 && rail.contains(state.cell) {
                return Err(Error::Repair(format!(
                    "segment touches the rail at {} before its final move",
                    state.cell
                )));
            }
            states.push(state);
            state = world.step(state, a)?;
        }
        if !rail.contains(state.cell) {
            return Err(Error::Repair(format!("segment ends off the rail at {}", state.cell)));
        }
        Ok(Self {
            states,
            moves: moves.to_vec(),
            end: state,
            harvest_step: 0,
            harvest_log_likelihood: f64::NAN,
        })
    }

    pub fn len(&self) -> usize {
        self.moves.len()
    }

    pub fn is_empty(&self) -> bool {
        self.moves.is_empty()
    }

    pub fn start(&self) -> MazeState {
        self.states[0]
    }

    pub fn tokens(&self, world: &GridWorld) -> Vec<Token> {
        self.states
            .iter()
            .zip(&self.moves)
            .map(|(s, &a)| Token::new(world.key(s.cell), a))
            .collect()
    }

    pub fn log_likelihood(&self, world: &GridWorld, policy: &PolicyTable) -> f64 {
        policy.sequence_log_prob(&self.tokens(world))
    }

    /// Records when and at what likelihood the segment was harvested.
    pub fn stamp(&mut self, world: &GridWorld, policy: &PolicyTable, step: usize) {
        self.harvest_step = step;
        self.harvest_log_likelihood = self.log_likelihood(world, policy);
    }
}

/// Prefix of `trajectory` through its first transition onto the rail.
pub fn harvest_repair(
    world: &GridWorld,
    trajectory: &Trajectory,
    rail: &RailSet,
) -> Result<Option<RepairSegment>> {
    if rail.contains(trajectory.start.cell) {
        return Err(Error::Repair(format!(
            "trajectory starts on the rail at {}; nothing to repair",
            trajectory.start.cell
        )));
    }
    let _ = world;
    let entry = trajectory
        .states
        .iter()
        .skip(1)
        .position(|s| rail.contains(s.cell));
    Ok(entry.map(|t| RepairSegment {
        states: trajectory.states[..=t].to_vec(),
        moves: trajectory.moves[..=t].to_vec(),
        end: trajectory.states[t + 1],
        harvest_step: 0,
        harvest_log_likelihood: f64::NAN,
    }))
}

/// Bounded FIFO of harvested repairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepairBuffer {
    segments: VecDeque<RepairSegment>,
    capacity: usize,
}

impl RepairBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "buffer capacity must be positive");
        Self {
            segments: VecDeque::with_capacity(capacity),
            capacity,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    /// Appends a segment, returning the evicted oldest one when full.
    pub fn push(&mut self, segment: RepairSegment) -> Option<RepairSegment> {
        let evicted = if self.segments.len() == self.capacity {
            self.segments.pop_front()
        } else {
            None
        };
        self.segments.push_back(segment);
        evicted
    }

    pub fn iter(&self) -> impl Iterator<Item = &RepairSegment> {
        self.segments.iter()
    }

    /// Uniform draw with replacement.
    pub fn sample<'a, R: Rng + ?Sized>(&'a self, size: usize, rng: &mut R) -> Vec<&'a RepairSegment> {
        if self.segments.is_empty() {
            return Vec::new();
        }
        (0..size)
            .map(|_| &self.segments[rng.random_range(0..self.segments.len())])
            .collect()
    }

    /// JSON dump for post-hoc analysis.
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.segments)?)
    }
}

/// Gradient of the minibatch mean of sum_t log pi(a_t | s_t). Empty input gives zero.
pub fn guide_gradient(
    world: &GridWorld,
    policy: &PolicyTable,
    minibatch: &[&RepairSegment],
) -> ScoreGradient {
    let mut grad = ScoreGradient::default();
    if minibatch.is_empty() {
        return grad;
    }
    let w = 1.0 / minibatch.len() as f64;
    for seg in minibatch {
        for t in seg.tokens(world) {
            grad.add_logprob_grad(policy, t.key, t.action, w);
        }
    }
    grad
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GuidanceConfig {
    pub lambda0: f64,
    pub anneal_start_fraction: f64,
    pub minibatch_size: usize,
    pub buffer_capacity: usize,
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        Self {
            lambda0: 0.07,
            anneal_start_fraction: 0.5,
            minibatch_size: 16,
            buffer_capacity: 256,
        }
    }
}

impl GuidanceConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda0.is_finite() && self.lambda0 >= 0.0) {
            return Err(Error::InvalidArgument("lambda0 must be non-negative".into()));
        }
        if !(0.0..=1.0).contains(&self.anneal_start_fraction) {
            return Err(Error::InvalidArgument(
                "anneal_start_fraction must lie in [0, 1]".into(),
            ));
        }
        if self.minibatch_size == 0 || self.buffer_capacity == 0 {
            return Err(Error::InvalidArgument(
                "minibatch size and buffer capacity must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Constant `lambda0` until `anneal_start_fraction * total_steps`, then linear to 0.
pub fn lambda_schedule(step: usize, total_steps: usize, config: &GuidanceConfig) -> f64 {
    if total_steps == 0 {
        return config.lambda0;
    }
    let step = step.min(total_steps) as f64;
    let total = total_steps as f64;
    let start = config.anneal_start_fraction * total;
    if step <= start {
        return config.lambda0;
    }
    let span = total - start;
    if span <= 0.0 {
        return 0.0;
    }
    config.lambda0 * (total - step) / span
}

/// Where the imitation targets come from.
#[derive(Debug)]
pub enum GuidanceSource<'a> {
    /// On-policy repairs, harvested from each step's rollouts.
    Harvested {
        buffer: &'a mut RepairBuffer,
        rail: &'a RailSet,
    },
    /// One fixed target cloned every step (a simulated external fix).
    Fixed(&'a RepairSegment),
    /// Plain GRPO.
    None,
}

#[derive(Debug, Clone)]
pub struct GuidedOutcome {
    pub grpo: GrpoOutcome,
    pub lambda: f64,
    pub buffer_size: usize,
    pub harvested: usize,
    pub guide_grad_norm: f64,
}

/// One combined ascent on the GRPO gradient plus `lambda` times the guidance
/// gradient. Rollouts draw from `rollout_rng` exactly as `grpo_step` does;
/// minibatch sampling uses `guide_rng`, so `lambda = 0` reproduces plain GRPO.
#[allow(clippy::too_many_arguments)]
pub fn guided_step<R1: Rng + ?Sized, R2: Rng + ?Sized>(
    policy: &mut PolicyTable,
    world: &GridWorld,
    context: MazeState,
    config: &GrpoConfig,
    source: GuidanceSource<'_>,
    lambda: f64,
    minibatch_size: usize,
    step_index: usize,
    rollout_rng: &mut R1,
    guide_rng: &mut R2,
) -> Result<GuidedOutcome> {
    config.validate()?;
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "lambda must be non-negative, got {lambda}"
        )));
    }
    let mut group = sample_group(
        world,
        policy,
        context,
        config.group_size,
        config.eps_norm,
        rollout_rng,
    )?;
    group.normalize();
    let (grpo_grad, stats) = grpo_gradient(world, policy, policy, &group, config.clip_eps)?;

    let mut harvested = 0;
    let (guide, buffer_size) = match source {
        GuidanceSource::Harvested { buffer, rail } => {
            if !rail.contains(context.cell) {
                for traj in &group.members {
                    if let Some(mut seg) = harvest_repair(world, traj, rail)? {
                        seg.stamp(world, policy, step_index);
                        buffer.push(seg);
                        harvested += 1;
                    }
                }
            }
            let guide = if lambda > 0.0 && !buffer.is_empty() {
                let batch = buffer.sample(minibatch_size, guide_rng);
                Some(guide_gradient(world, policy, &batch))
            } else {
                None
            };
            (guide, buffer.len())
        }
        GuidanceSource::Fixed(target) => {
            let guide = (lambda > 0.0).then(|| guide_gradient(world, policy, &[target]));
            (guide, 1)
        }
        GuidanceSource::None => (None, 0),
    };

    let guide_grad_norm = guide.as_ref().map_or(0.0, ScoreGradient::norm);
    let gradient = match guide {
        Some(g) => {
            let mut combined = grpo_grad;
            combined.add_scaled(&g, lambda);
            combined
        }
        None => grpo_grad,
    };
    policy.apply_update(&gradient, config.lr)?;
    Ok(GuidedOutcome {
        grpo: GrpoOutcome {
            stats,
            group,
            gradient,
        },
        lambda,
        buffer_size,
        harvested,
        guide_grad_norm,
    })
}

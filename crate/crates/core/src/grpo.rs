//! Group sampling, group-relative advantages and the clipped surrogate gradient.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gridworld::{GridWorld, MazeState, Trajectory};
use crate::policy::{PolicyTable, ScoreGradient, Token};

/// Guard added to the reward standard deviation.
pub const DEFAULT_EPS_NORM: f64 = 1e-8;
pub const DEFAULT_CLIP_EPS: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GrpoConfig {
    pub group_size: usize,
    pub clip_eps: f64,
    pub lr: f64,
    pub eps_norm: f64,
}

impl Default for GrpoConfig {
    fn default() -> Self {
        Self {
            group_size: 16,
            clip_eps: DEFAULT_CLIP_EPS,
            lr: 1.0,
            eps_norm: DEFAULT_EPS_NORM,
        }
    }
}

impl GrpoConfig {
    pub fn validate(&self) -> Result<()> {
        if self.group_size < 2 {
            return Err(Error::InvalidArgument(format!(
                "group size must be at least 2, got {}",
                self.group_size
            )));
        }
        if !(self.clip_eps > 0.0 && self.clip_eps < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "clip epsilon must lie in (0, 1), got {}",
                self.clip_eps
            )));
        }
        if !self.lr.is_finite() {
            return Err(Error::InvalidArgument("learning rate must be finite".into()));
        }
        if !(self.eps_norm.is_finite() && self.eps_norm >= 0.0) {
            return Err(Error::InvalidArgument("eps_norm must be non-negative".into()));
        }
        Ok(())
    }
}

/// G rollouts sharing one start state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryGroup {
    pub context: MazeState,
    pub members: Vec<Trajectory>,
    pub rewards: Vec<f64>,
    pub advantages: Option<Vec<f64>>,
    pub eps_norm: f64,
}

impl TrajectoryGroup {
    pub fn from_members(context: MazeState, members: Vec<Trajectory>, eps_norm: f64) -> Self {
        let rewards = members.iter().map(Trajectory::reward).collect();
        Self {
            context,
            members,
            rewards,
            advantages: None,
            eps_norm,
        }
    }

    pub fn group_size(&self) -> usize {
        self.members.len()
    }

    pub fn successes(&self) -> usize {
        self.rewards.iter().filter(|&&r| r > 0.5).count()
    }

    pub fn normalize(&mut self) -> &[f64] {
        self.advantages = Some(group_advantages(&self.rewards, self.eps_norm));
        self.advantages.as_deref().expect("just set")
    }

    pub fn tokens(&self, world: &GridWorld) -> Vec<Vec<Token>> {
        self.members.iter().map(|t| t.tokens(world)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GrpoStats {
    pub k: usize,
    pub group_size: usize,
    pub mean_reward: f64,
    /// Realized advantage on successes (0 when there are none).
    pub a_k: f64,
    /// Realized advantage on failures (0 when there are none).
    pub b_k: f64,
    pub gradient_norm: f64,
    pub clipped_fraction: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinaryAdvantages {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

/// G independent rollouts from `context`; each member gets its own seeded generator.
pub fn sample_group<R: Rng + ?Sized>(
    world: &GridWorld,
    policy: &PolicyTable,
    context: MazeState,
    group_size: usize,
    eps_norm: f64,
    rng: &mut R,
) -> Result<TrajectoryGroup> {
    if group_size < 2 {
        return Err(Error::InvalidArgument(format!(
            "group size must be at least 2, got {group_size}"
        )));
    }
    world.check_state(context)?;
    let seeds: Vec<u64> = (0..group_size).map(|_| rng.next_u64()).collect();
    let members = seeds
        .into_iter()
        .map(|seed| world.rollout(policy, context, &mut ChaCha8Rng::seed_from_u64(seed)))
        .collect::<Result<Vec<_>>>()?;
    Ok(TrajectoryGroup::from_members(context, members, eps_norm))
}

/// (R_i - mean) / (std + eps) with the population standard deviation.
pub fn group_advantages(rewards: &[f64], eps_norm: f64) -> Vec<f64> {
    // Sums run over a sorted copy so the result is invariant to member order.
    let mut sorted = rewards.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = rewards.len() as f64;
    let mean = sorted.iter().sum::<f64>() / n;
    let var = sorted.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
    let denom = var.sqrt() + eps_norm;
    rewards
        .iter()
        .map(|r| {
            let centered = r - mean;
            if centered == 0.0 {
                0.0
            } else {
                centered / denom
            }
        })
        .collect()
}

/// a_k = sqrt((G-k)/k), b_k = -sqrt(k/(G-k)), c_k = sqrt(k(G-k))/G.
pub fn binary_advantages_closed_form(k: usize, group_size: usize) -> Result<BinaryAdvantages> {
    if k == 0 || k >= group_size {
        return Err(Error::DegenerateGroup { k, group_size });
    }
    let (k, g) = (k as f64, group_size as f64);
    Ok(BinaryAdvantages {
        a: ((g - k) / k).sqrt(),
        b: -(k / (g - k)).sqrt(),
        c: (k * (g - k)).sqrt() / g,
    })
}

/// Gradient of the clipped surrogate with per-sequence length normalization.
///
/// Returns the gradient and the fraction of tokens whose clipped branch was
/// active (those contribute nothing).
pub fn clipped_surrogate_gradient(
    policy: &PolicyTable,
    old_policy: &PolicyTable,
    sequences: &[Vec<Token>],
    advantages: &[f64],
    clip_eps: f64,
) -> Result<(ScoreGradient, f64)> {
    if sequences.len() != advantages.len() {
        return Err(Error::InvalidArgument(format!(
            "{} sequences but {} advantages",
            sequences.len(),
            advantages.len()
        )));
    }
    let g = sequences.len() as f64;
    let mut grad = ScoreGradient::default();
    let mut tokens = 0usize;
    let mut clipped = 0usize;
    for (seq, &adv) in sequences.iter().zip(advantages) {
        if seq.is_empty() {
            continue;
        }
        let weight = adv / (g * seq.len() as f64);
        for t in seq {
            tokens += 1;
            let ratio = (policy.log_prob(t.key, t.action) - old_policy.log_prob(t.key, t.action))
                .exp();
            let clip_active = (adv > 0.0 && ratio > 1.0 + clip_eps)
                || (adv < 0.0 && ratio < 1.0 - clip_eps);
            if clip_active {
                clipped += 1;
                continue;
            }
            if adv != 0.0 {
                grad.add_logprob_grad(policy, t.key, t.action, weight * ratio);
            }
        }
    }
    let fraction = if tokens == 0 {
        0.0
    } else {
        clipped as f64 / tokens as f64
    };
    Ok((grad, fraction))
}

pub(crate) fn stats_for(
    rewards: &[f64],
    advantages: &[f64],
    gradient_norm: f64,
    clipped_fraction: f64,
) -> GrpoStats {
    let k = rewards.iter().filter(|&&r| r > 0.5).count();
    let pick = |want: bool| {
        rewards
            .iter()
            .zip(advantages)
            .find(|(r, _)| (**r > 0.5) == want)
            .map_or(0.0, |(_, a)| *a)
    };
    GrpoStats {
        k,
        group_size: rewards.len(),
        mean_reward: rewards.iter().sum::<f64>() / rewards.len() as f64,
        a_k: pick(true),
        b_k: pick(false),
        gradient_norm,
        clipped_fraction,
    }
}

/// Clipped GRPO gradient for a normalized group. With `old_policy == policy`
/// every ratio is 1 and this is (1/G) sum_i A_i * traj_score(tau_i).
pub fn grpo_gradient(
    world: &GridWorld,
    policy: &PolicyTable,
    old_policy: &PolicyTable,
    group: &TrajectoryGroup,
    clip_eps: f64,
) -> Result<(ScoreGradient, GrpoStats)> {
    let advantages = group.advantages.as_deref().ok_or(Error::AdvantagesUnset)?;
    if !(clip_eps > 0.0 && clip_eps < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "clip epsilon must lie in (0, 1), got {clip_eps}"
        )));
    }
    let (grad, clipped) = clipped_surrogate_gradient(
        policy,
        old_policy,
        &group.tokens(world),
        advantages,
        clip_eps,
    )?;
    let stats = stats_for(&group.rewards, advantages, grad.norm(), clipped);
    Ok((grad, stats))
}

#[derive(Debug, Clone)]
pub struct GrpoOutcome {
    pub stats: GrpoStats,
    pub group: TrajectoryGroup,
    pub gradient: ScoreGradient,
}

/// One on-policy update: sample, normalize, differentiate, ascend.
pub fn grpo_step<R: Rng + ?Sized>(
    policy: &mut PolicyTable,
    world: &GridWorld,
    context: MazeState,
    config: &GrpoConfig,
    rng: &mut R,
) -> Result<GrpoOutcome> {
    config.validate()?;
    let mut group = sample_group(world, policy, context, config.group_size, config.eps_norm, rng)?;
    group.normalize();
    let (gradient, stats) = grpo_gradient(world, policy, policy, &group, config.clip_eps)?;
    policy.apply_update(&gradient, config.lr)?;
    Ok(GrpoOutcome {
        stats,
        group,
        gradient,
    })
}

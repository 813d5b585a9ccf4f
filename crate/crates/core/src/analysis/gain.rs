//! First-order gain of one imitation step, and simulated low-likelihood repair targets.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gridworld::{Action, Cell, GridWorld, MazeState};
use crate::guidance::{guide_gradient, harvest_repair, RailSet, RepairSegment};
use crate::policy::{PolicyTable, Token};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GainPrediction {
    pub eta: f64,
    pub omega: f64,
    pub target_likelihood: f64,
    pub score_norm_sq: f64,
    pub q_hat: f64,
    pub predicted_gain: f64,
}

impl GainPrediction {
    pub fn new(eta: f64, omega: f64, target_likelihood: f64, score_norm_sq: f64, q_hat: f64) -> Self {
        Self {
            eta,
            omega,
            target_likelihood,
            score_norm_sq,
            q_hat,
            predicted_gain: eta * omega * target_likelihood * q_hat * score_norm_sq,
        }
    }
}

fn check_context(segment: &RepairSegment, context: MazeState) -> Result<()> {
    if segment.start().cell != context.cell {
        return Err(Error::InvalidArgument(format!(
            "segment starts at {} but the context is {}",
            segment.start().cell,
            context.cell
        )));
    }
    Ok(())
}

/// eta * omega * pi(w|s) * q_hat * |grad log pi(w|s)|^2.
pub fn predict_first_order_gain(
    world: &GridWorld,
    policy: &PolicyTable,
    segment: &RepairSegment,
    context: MazeState,
    eta: f64,
    omega: f64,
    q_hat: f64,
) -> Result<GainPrediction> {
    check_context(segment, context)?;
    if !(0.0..=1.0).contains(&q_hat) {
        return Err(Error::InvalidArgument(format!("q_hat must lie in [0, 1], got {q_hat}")));
    }
    let tokens = segment.tokens(world);
    let likelihood = policy.sequence_log_prob(&tokens).exp();
    if !(likelihood > 0.0) {
        return Err(Error::OffDistribution(format!(
            "segment likelihood underflows ({} moves)",
            tokens.len()
        )));
    }
    let score_norm_sq = policy.sequence_score(&tokens).norm_sq();
    Ok(GainPrediction::new(eta, omega, likelihood, score_norm_sq, q_hat))
}

/// Success rate of `n` rollouts continuing from the segment's end state.
pub fn estimate_q_hat<R: Rng + ?Sized>(
    world: &GridWorld,
    policy: &PolicyTable,
    segment: &RepairSegment,
    n: usize,
    rng: &mut R,
) -> Result<f64> {
    if n == 0 {
        return Err(Error::InvalidArgument("need at least one rollout".into()));
    }
    let mut wins = 0usize;
    for _ in 0..n {
        if world.rollout(policy, segment.end, rng)?.success {
            wins += 1;
        }
    }
    Ok(wins as f64 / n as f64)
}

/// Success rate from `context` over `seeds.len()` rollouts, one generator per seed.
pub fn success_rate_with_seeds(
    world: &GridWorld,
    policy: &PolicyTable,
    context: MazeState,
    seeds: &[u64],
) -> Result<f64> {
    world.check_state(context)?;
    let mut wins = 0usize;
    for &s in seeds {
        if world.rollout(policy, context, &mut ChaCha8Rng::seed_from_u64(s))?.success {
            wins += 1;
        }
    }
    Ok(wins as f64 / seeds.len().max(1) as f64)
}

/// Policy after one ascent step of size `eta * omega` on log pi(segment).
pub fn guidance_ascent(
    world: &GridWorld,
    policy: &PolicyTable,
    segment: &RepairSegment,
    eta: f64,
    omega: f64,
) -> Result<PolicyTable> {
    let mut next = policy.clone();
    next.apply_update(&guide_gradient(world, policy, &[segment]), eta * omega)?;
    Ok(next)
}

/// J(after) - J(before), each estimated with the same `n_eval` rollout seeds.
#[allow(clippy::too_many_arguments)]
pub fn measure_gain<R: Rng + ?Sized>(
    world: &GridWorld,
    policy: &PolicyTable,
    segment: &RepairSegment,
    context: MazeState,
    eta: f64,
    omega: f64,
    n_eval: usize,
    rng: &mut R,
) -> Result<f64> {
    check_context(segment, context)?;
    if n_eval == 0 {
        return Err(Error::InvalidArgument("n_eval must be positive".into()));
    }
    let seeds: Vec<u64> = (0..n_eval).map(|_| rng.next_u64()).collect();
    let after = guidance_ascent(world, policy, segment, eta, omega)?;
    let j0 = success_rate_with_seeds(world, policy, context, &seeds)?;
    let j1 = success_rate_with_seeds(world, &after, context, &seeds)?;
    Ok(j1 - j0)
}

/// Every simple path from `context` that changes cell on each move, stays off
/// the rail until its last move and lands on the rail, with at most `max_len` moves.
pub fn enumerate_repairs(
    world: &GridWorld,
    rail: &RailSet,
    context: MazeState,
    max_len: usize,
) -> Result<Vec<Vec<Action>>> {
    world.check_state(context)?;
    if rail.contains(context.cell) {
        return Err(Error::Repair(format!("context {} is on the rail", context.cell)));
    }
    let max_len = max_len.min(world.horizon() - context.steps_taken);
    // Off-rail distance to the rail, used to prune hopeless branches.
    let rail_cells: Vec<_> = rail.cells().collect();
    let mut dist = vec![usize::MAX; world.num_keys()];
    let mut queue = std::collections::VecDeque::new();
    for &c in &rail_cells {
        dist[world.key(c).0] = 0;
        queue.push_back(c);
    }
    while let Some(c) = queue.pop_front() {
        let d = dist[world.key(c).0];
        for a in Action::ALL {
            // Moves are reversible, so neighbors of c can reach c in one step.
            if let Some(n) = world.neighbor(c, a) {
                let k = world.key(n).0;
                if dist[k] == usize::MAX && !rail.contains(n) {
                    dist[k] = d + 1;
                    queue.push_back(n);
                }
            }
        }
    }
    let mut out = Vec::new();
    let mut visited = vec![false; world.num_keys()];
    let mut path = Vec::new();
    visited[world.key(context.cell).0] = true;
    dfs(world, rail, &dist, context.cell, max_len, &mut visited, &mut path, &mut out);
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
fn dfs(
    world: &GridWorld,
    rail: &RailSet,
    dist: &[usize],
    cell: crate::gridworld::Cell,
    max_len: usize,
    visited: &mut [bool],
    path: &mut Vec<Action>,
    out: &mut Vec<Vec<Action>>,
) {
    for a in Action::ALL {
        let Some(next) = world.neighbor(cell, a) else {
            continue;
        };
        let k = world.key(next).0;
        if visited[k] || dist[k] == usize::MAX || path.len() + dist[k] + 1 > max_len {
            continue;
        }
        path.push(a);
        if rail.contains(next) {
            out.push(path.clone());
        } else {
            visited[k] = true;
            dfs(world, rail, dist, next, max_len, visited, path, out);
            visited[k] = false;
        }
        path.pop();
    }
}

/// Options for [`make_ood_target_with`].
#[derive(Debug, Clone, PartialEq)]
pub struct OodQuery {
    pub min_likelihood_ratio: f64,
    /// Log-likelihood the target must undercut by the ratio; defaults to the
    /// most likely enumerated repair.
    pub reference_log_likelihood: Option<f64>,
    /// Require exactly this many moves.
    pub length: Option<usize>,
    /// Extra moves allowed beyond the shortest repair when enumerating.
    pub slack: usize,
    /// Among equally short candidates, fewer shared tokens with this set wins.
    pub avoid: Vec<Token>,
}

impl OodQuery {
    pub fn new(min_likelihood_ratio: f64) -> Self {
        Self {
            min_likelihood_ratio,
            reference_log_likelihood: None,
            length: None,
            slack: 4,
            avoid: Vec::new(),
        }
    }
}

/// A valid repair from `context` that the policy finds at least
/// `min_likelihood_ratio` times less likely than its most likely repair.
pub fn make_ood_target(
    world: &GridWorld,
    rail: &RailSet,
    policy: &PolicyTable,
    context: MazeState,
    min_likelihood_ratio: f64,
) -> Result<RepairSegment> {
    make_ood_target_with(world, rail, policy, context, &OodQuery::new(min_likelihood_ratio))
}

/// Shortest qualifying path wins, then the one sharing fewest tokens with
/// `query.avoid`, then the more likely one.
pub fn make_ood_target_with(
    world: &GridWorld,
    rail: &RailSet,
    policy: &PolicyTable,
    context: MazeState,
    query: &OodQuery,
) -> Result<RepairSegment> {
    if !(query.min_likelihood_ratio >= 1.0) {
        return Err(Error::InvalidArgument("likelihood ratio must be at least 1".into()));
    }
    let dist = world.distances(context.cell, &[]);
    let shortest = rail
        .cells()
        .filter_map(|c| dist[world.key(c).0])
        .min()
        .ok_or_else(|| Error::MazeTooConstrained("rail unreachable from context".into()))?;
    let max_len = query.length.unwrap_or(shortest + query.slack);
    let paths = enumerate_repairs(world, rail, context, max_len)?;
    let scored: Vec<(Vec<Action>, f64, usize)> = paths
        .into_iter()
        .map(|moves| {
            let seg = RepairSegment::from_moves(world, rail, context, &moves)
                .expect("enumerated paths are valid repairs");
            let ll = seg.log_likelihood(world, policy);
            let shared = seg.tokens(world).iter().filter(|t| query.avoid.contains(t)).count();
            (moves, ll, shared)
        })
        .collect();
    let reference = match query.reference_log_likelihood {
        Some(r) => r,
        None => scored
            .iter()
            .map(|(_, ll, _)| *ll)
            .max_by(f64::total_cmp)
            .ok_or_else(|| Error::MazeTooConstrained("no repair path found".into()))?,
    };
    let cutoff = reference - query.min_likelihood_ratio.ln();
    let best = scored
        .iter()
        .filter(|(m, ll, _)| *ll <= cutoff + 1e-12 && query.length.is_none_or(|l| m.len() == l))
        .min_by(|(ma, la, sa), (mb, lb, sb)| {
            ma.len().cmp(&mb.len()).then(sa.cmp(sb)).then(lb.total_cmp(la))
        })
        .ok_or_else(|| {
            Error::MazeTooConstrained(format!(
                "no repair within {max_len} moves is {}x less likely than the reference",
                query.min_likelihood_ratio
            ))
        })?;
    RepairSegment::from_moves(world, rail, context, &best.0)
}

/// `cell` with the step counter advanced so that exactly `slack` moves remain
/// beyond the shortest path to the goal.
pub fn tight_context(world: &GridWorld, cell: Cell, slack: usize) -> Result<MazeState> {
    let d = world
        .shortest_path_len(cell, world.goal())
        .ok_or_else(|| Error::InvalidState(format!("goal unreachable from {cell}")))?;
    let remaining = d + slack;
    if remaining > world.horizon() {
        return Err(Error::InvalidArgument(format!(
            "{remaining} moves exceed the horizon {}",
            world.horizon()
        )));
    }
    Ok(MazeState {
        cell,
        steps_taken: world.horizon() - remaining,
    })
}

/// Settings for an in-distribution versus off-distribution gain comparison.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GainExperiment {
    pub context: MazeState,
    pub eta: f64,
    pub omega: f64,
    pub n_eval: usize,
    /// On-policy rollouts from the context used to harvest the in-distribution segment.
    pub n_harvest: usize,
    pub q_rollouts: usize,
    pub min_likelihood_ratio: f64,
}

impl GainExperiment {
    pub fn new(context: MazeState) -> Self {
        Self {
            context,
            eta: 0.5,
            omega: 1.0,
            n_eval: 20_000,
            n_harvest: 4_000,
            q_rollouts: 2_000,
            min_likelihood_ratio: 10.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainArm {
    pub moves: Vec<Action>,
    pub prediction: GainPrediction,
    pub measured: f64,
}

impl GainArm {
    /// measured / predicted.
    pub fn agreement(&self) -> f64 {
        self.measured / self.prediction.predicted_gain
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainRecord {
    pub context: MazeState,
    pub in_dist: GainArm,
    /// Absent when no matched-length target is rare enough.
    pub off_dist: Option<GainArm>,
}

impl GainRecord {
    pub fn likelihood_ratio(&self) -> Option<f64> {
        let off = self.off_dist.as_ref()?;
        Some(self.in_dist.prediction.target_likelihood / off.prediction.target_likelihood)
    }

    /// In-dist over off-dist measured gain; infinite when only the former is positive.
    pub fn measured_ratio(&self) -> Option<f64> {
        let off = self.off_dist.as_ref()?;
        let (a, b) = (self.in_dist.measured, off.measured);
        Some(if b <= 0.0 && a > 0.0 { f64::INFINITY } else { a / b })
    }
}

/// The most frequent repair among successful on-policy rollouts from `context`.
pub fn harvest_in_distribution<R: Rng + ?Sized>(
    world: &GridWorld,
    rail: &RailSet,
    policy: &PolicyTable,
    context: MazeState,
    n: usize,
    rng: &mut R,
) -> Result<RepairSegment> {
    let mut counts: std::collections::BTreeMap<Vec<Action>, usize> = Default::default();
    for _ in 0..n {
        let t = world.rollout(policy, context, rng)?;
        if !t.success {
            continue;
        }
        if let Some(seg) = harvest_repair(world, &t, rail)? {
            *counts.entry(seg.moves).or_default() += 1;
        }
    }
    let moves = counts
        .iter()
        .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
        .map(|(m, _)| m.clone())
        .ok_or_else(|| {
            Error::InsufficientData(format!("no successful repair from {} in {n} rollouts", context.cell))
        })?;
    RepairSegment::from_moves(world, rail, context, &moves)
}

fn gain_arm<R: Rng + ?Sized>(
    world: &GridWorld,
    policy: &PolicyTable,
    segment: &RepairSegment,
    exp: &GainExperiment,
    rng: &mut R,
) -> Result<GainArm> {
    let q_hat = estimate_q_hat(world, policy, segment, exp.q_rollouts, rng)?;
    let prediction =
        predict_first_order_gain(world, policy, segment, exp.context, exp.eta, exp.omega, q_hat)?;
    let measured = measure_gain(world, policy, segment, exp.context, exp.eta, exp.omega, exp.n_eval, rng)?;
    Ok(GainArm {
        moves: segment.moves.clone(),
        prediction,
        measured,
    })
}

/// Harvests an in-distribution repair, builds a matched-length target at least
/// `min_likelihood_ratio` times less likely, and measures and predicts both gains.
pub fn gain_experiment<R: Rng + ?Sized>(
    world: &GridWorld,
    rail: &RailSet,
    policy: &PolicyTable,
    exp: &GainExperiment,
    rng: &mut R,
) -> Result<GainRecord> {
    let w_in = harvest_in_distribution(world, rail, policy, exp.context, exp.n_harvest, rng)?;
    let in_dist = gain_arm(world, policy, &w_in, exp, rng)?;
    let query = OodQuery {
        reference_log_likelihood: Some(w_in.log_likelihood(world, policy)),
        length: Some(w_in.len()),
        avoid: w_in.tokens(world),
        ..OodQuery::new(exp.min_likelihood_ratio)
    };
    let off_dist = match make_ood_target_with(world, rail, policy, exp.context, &query) {
        Ok(w_off) => Some(gain_arm(world, policy, &w_off, exp, rng)?),
        Err(Error::MazeTooConstrained(_)) => None,
        Err(e) => return Err(e),
    };
    Ok(GainRecord {
        context: exp.context,
        in_dist,
        off_dist,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::StateKey;

    /// 5-wide strip: row 0 is the rail, the context sits at (2, 2).
    fn strip() -> (GridWorld, RailSet, MazeState) {
        let world = GridWorld::open(5, 3, Cell::new(0, 4), 20).unwrap();
        let rail = RailSet::from_cells((0..5).map(|c| Cell::new(0, c))).unwrap();
        (world, rail, MazeState::at(Cell::new(2, 2)))
    }

    #[test]
    fn saturated_segment_predicts_zero() {
        let (world, rail, ctx) = strip();
        let mut p = PolicyTable::uniform(world.num_keys(), 1.0);
        p.set_logit(world.key(Cell::new(2, 2)), Action::N, 60.0);
        p.set_logit(world.key(Cell::new(1, 2)), Action::N, 60.0);
        let seg = RepairSegment::from_moves(&world, &rail, ctx, &[Action::N, Action::N]).unwrap();
        let g = predict_first_order_gain(&world, &p, &seg, ctx, 1.0, 1.0, 1.0).unwrap();
        assert!((g.target_likelihood - 1.0).abs() < 1e-12);
        assert!(g.score_norm_sq < 1e-40);
        assert!(g.predicted_gain < 1e-40);
    }

    #[test]
    fn prediction_is_linear_in_omega() {
        let (world, rail, ctx) = strip();
        let p = PolicyTable::uniform(world.num_keys(), 1.0);
        let seg = RepairSegment::from_moves(&world, &rail, ctx, &[Action::N, Action::N]).unwrap();
        let a = predict_first_order_gain(&world, &p, &seg, ctx, 0.1, 1.0, 0.5).unwrap();
        let b = predict_first_order_gain(&world, &p, &seg, ctx, 0.1, 2.0, 0.5).unwrap();
        assert!((b.predicted_gain - 2.0 * a.predicted_gain).abs() < 1e-15);
        // Uniform rows: likelihood 1/64, |score|^2 = 2 * 7/8.
        assert!((a.target_likelihood - 1.0 / 64.0).abs() < 1e-15);
        assert!((a.score_norm_sq - 1.75).abs() < 1e-12);
    }

    #[test]
    fn wrong_context_rejected() {
        let (world, rail, ctx) = strip();
        let p = PolicyTable::uniform(world.num_keys(), 1.0);
        let seg = RepairSegment::from_moves(&world, &rail, ctx, &[Action::N, Action::N]).unwrap();
        let other = MazeState::at(Cell::new(2, 3));
        assert!(predict_first_order_gain(&world, &p, &seg, other, 1.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn underflowing_segment_is_off_distribution() {
        let (world, rail, ctx) = strip();
        let mut p = PolicyTable::uniform(world.num_keys(), 1.0);
        p.set_logit(world.key(Cell::new(2, 2)), Action::N, -800.0);
        let seg = RepairSegment::from_moves(&world, &rail, ctx, &[Action::N, Action::N]).unwrap();
        assert!(matches!(
            predict_first_order_gain(&world, &p, &seg, ctx, 1.0, 1.0, 1.0),
            Err(Error::OffDistribution(_))
        ));
    }

    #[test]
    fn zero_eta_measures_zero() {
        let (world, rail, ctx) = strip();
        let p = PolicyTable::uniform(world.num_keys(), 1.0);
        let seg = RepairSegment::from_moves(&world, &rail, ctx, &[Action::N, Action::N]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let d = measure_gain(&world, &p, &seg, ctx, 0.0, 1.0, 500, &mut rng).unwrap();
        assert_eq!(d, 0.0);
    }

    /// Brute force over all move sequences as the enumeration oracle.
    fn brute_force(world: &GridWorld, rail: &RailSet, ctx: MazeState, max_len: usize) -> Vec<Vec<Action>> {
        let mut out = Vec::new();
        let mut frontier = vec![Vec::<Action>::new()];
        for _ in 0..max_len {
            let mut next = Vec::new();
            for p in &frontier {
                for a in Action::ALL {
                    let mut q = p.clone();
                    q.push(a);
                    if let Ok(seg) = RepairSegment::from_moves(world, rail, ctx, &q) {
                        let mut cells: Vec<Cell> = seg.states.iter().map(|s| s.cell).collect();
                        cells.push(seg.end.cell);
                        let n = cells.len();
                        cells.sort();
                        cells.dedup();
                        if cells.len() == n {
                            out.push(q);
                        }
                    } else {
                        next.push(q);
                    }
                }
            }
            frontier = next;
        }
        out.sort();
        out
    }

    #[test]
    fn enumeration_matches_brute_force() {
        let (world, rail, ctx) = strip();
        for max_len in 1..=4 {
            let mut got = enumerate_repairs(&world, &rail, ctx, max_len).unwrap();
            got.sort();
            assert_eq!(got, brute_force(&world, &rail, ctx, max_len), "max_len {max_len}");
        }
    }

    #[test]
    fn ood_target_undercuts_reference() {
        let (world, rail, ctx) = strip();
        let mut p = PolicyTable::uniform(world.num_keys(), 1.0);
        for c in 0..5 {
            p.set_logit(world.key(Cell::new(2, c)), Action::N, 3.0);
            p.set_logit(world.key(Cell::new(1, c)), Action::N, 3.0);
        }
        let seg = make_ood_target(&world, &rail, &p, ctx, 10.0).unwrap();
        let best = p.prob(StateKey(world.key(Cell::new(2, 2)).0), Action::N)
            * p.prob(world.key(Cell::new(1, 2)), Action::N);
        assert!(seg.log_likelihood(&world, &p) <= best.ln() - 10f64.ln() + 1e-9);
        assert!(rail.contains(seg.end.cell));
        assert_eq!(seg.len(), 2);
    }

    #[test]
    fn impossible_ratio_reports_constrained_maze() {
        let (world, rail, ctx) = strip();
        let p = PolicyTable::uniform(world.num_keys(), 1.0);
        let q = OodQuery {
            length: Some(2),
            ..OodQuery::new(1e12)
        };
        assert!(matches!(
            make_ood_target_with(&world, &rail, &p, ctx, &q),
            Err(Error::MazeTooConstrained(_))
        ));
    }
}

//! Tabular softmax policy over the eight compass moves.
//!
//! Rows are addressed by an opaque [`StateKey`]; the agent keys rows by cell,
//! the polluter by (truncation cell, window position).

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gridworld::{Action, NUM_ACTIONS};

pub type Row = [f64; NUM_ACTIONS];

const CHECKPOINT_MAGIC: &str = "offrail-policy v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct StateKey(pub usize);

/// One decision: the row it was taken from and the action chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Token {
    pub key: StateKey,
    pub action: Action,
}

impl Token {
    pub fn new(key: StateKey, action: Action) -> Self {
        Self { key, action }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyTable {
    logits: Vec<Row>,
    temperature: f64,
}

impl PolicyTable {
    /// All-zero logits, i.e. the uniform policy.
    pub fn uniform(num_rows: usize, temperature: f64) -> Self {
        assert!(
            temperature.is_finite() && temperature > 0.0,
            "temperature must be positive"
        );
        Self {
            logits: vec![[0.0; NUM_ACTIONS]; num_rows],
            temperature,
        }
    }

    pub fn from_rows(logits: Vec<Row>, temperature: f64) -> Result<Self> {
        if !(temperature.is_finite() && temperature > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "temperature must be positive, got {temperature}"
            )));
        }
        if logits.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite logit".into()));
        }
        Ok(Self {
            logits,
            temperature,
        })
    }

    pub fn num_rows(&self) -> usize {
        self.logits.len()
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    pub fn with_temperature(mut self, temperature: f64) -> Self {
        assert!(temperature.is_finite() && temperature > 0.0);
        self.temperature = temperature;
        self
    }

    pub fn row(&self, key: StateKey) -> &Row {
        &self.logits[key.0]
    }

    pub fn rows(&self) -> &[Row] {
        &self.logits
    }

    pub fn set_logit(&mut self, key: StateKey, action: Action, value: f64) {
        assert!(value.is_finite());
        self.logits[key.0][action.index()] = value;
    }

    pub fn set_row(&mut self, key: StateKey, row: Row) {
        assert!(row.iter().all(|v| v.is_finite()));
        self.logits[key.0] = row;
    }

    /// softmax(logits / temperature)
    pub fn action_distribution(&self, key: StateKey) -> Row {
        softmax(&self.logits[key.0], self.temperature)
    }

    pub fn prob(&self, key: StateKey, action: Action) -> f64 {
        self.action_distribution(key)[action.index()]
    }

    pub fn log_prob(&self, key: StateKey, action: Action) -> f64 {
        log_softmax(&self.logits[key.0], self.temperature)[action.index()]
    }

    /// Inverse-CDF draw; consumes exactly one uniform from `rng`.
    pub fn sample_action<R: Rng + ?Sized>(&self, key: StateKey, rng: &mut R) -> Action {
        let probs = self.action_distribution(key);
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (i, p) in probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return Action::ALL[i];
            }
        }
        // u landed in the rounding gap above the cumulative sum.
        let last = probs
            .iter()
            .rposition(|&p| p > 0.0)
            .unwrap_or(NUM_ACTIONS - 1);
        Action::ALL[last]
    }

    /// Sum of log-probabilities over a token sequence.
    pub fn sequence_log_prob(&self, tokens: &[Token]) -> f64 {
        tokens.iter().map(|t| self.log_prob(t.key, t.action)).sum()
    }

    /// d log pi(a|s) / d logit(s, a') = (1{a = a'} - pi(a'|s)) / temperature
    pub fn logprob_grad(&self, key: StateKey, action: Action) -> ScoreGradient {
        let mut grad = ScoreGradient::default();
        grad.add_logprob_grad(self, key, action, 1.0);
        grad
    }

    /// Length-averaged score of a sequence; zero for an empty sequence.
    pub fn traj_score(&self, tokens: &[Token]) -> ScoreGradient {
        let mut grad = ScoreGradient::default();
        if tokens.is_empty() {
            return grad;
        }
        let w = 1.0 / tokens.len() as f64;
        for t in tokens {
            grad.add_logprob_grad(self, t.key, t.action, w);
        }
        grad
    }

    /// Summed (not averaged) score of a sequence: the gradient of its log-likelihood.
    pub fn sequence_score(&self, tokens: &[Token]) -> ScoreGradient {
        let mut grad = ScoreGradient::default();
        for t in tokens {
            grad.add_logprob_grad(self, t.key, t.action, 1.0);
        }
        grad
    }

    /// logits += step_size * gradient. Leaves the table untouched on error.
    pub fn apply_update(&mut self, gradient: &ScoreGradient, step_size: f64) -> Result<()> {
        if !step_size.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "step size must be finite, got {step_size}"
            )));
        }
        for (&key, row) in &gradient.rows {
            if key.0 >= self.logits.len() {
                return Err(Error::InvalidArgument(format!(
                    "gradient row {} outside table of {} rows",
                    key.0,
                    self.logits.len()
                )));
            }
            if let Some(a) = row.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFiniteGradient { key: key.0, action: a });
            }
        }
        for (&key, row) in &gradient.rows {
            let target = &mut self.logits[key.0];
            for (t, g) in target.iter_mut().zip(row) {
                *t += step_size * g;
            }
        }
        Ok(())
    }

    /// Max relative error of the analytic score row against central differences.
    pub fn finite_diff_check(&self, key: StateKey, action: Action, h: f64) -> Result<f64> {
        if !(1e-7..=1e-3).contains(&h) {
            return Err(Error::InvalidArgument(format!(
                "finite-difference step {h} outside [1e-7, 1e-3]"
            )));
        }
        let analytic = self.logprob_grad(key, action);
        let base = self.logits[key.0];
        let mut worst: f64 = 0.0;
        for j in 0..NUM_ACTIONS {
            let mut plus = base;
            let mut minus = base;
            plus[j] += h;
            minus[j] -= h;
            let lp = log_softmax(&plus, self.temperature)[action.index()];
            let lm = log_softmax(&minus, self.temperature)[action.index()];
            let numeric = (lp - lm) / (2.0 * h);
            let exact = analytic.get(key, Action::ALL[j]);
            worst = worst.max((exact - numeric).abs() / (exact.abs() + 1e-12));
        }
        Ok(worst)
    }

    /// Writes the versioned text checkpoint. Floats use Rust's shortest
    /// round-trip formatting, so loading restores every bit.
    pub fn to_checkpoint(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{CHECKPOINT_MAGIC}");
        let _ = writeln!(out, "temperature {:?}", self.temperature);
        let _ = writeln!(out, "rows {}", self.logits.len());
        for (k, row) in self.logits.iter().enumerate() {
            let _ = write!(out, "{k}");
            for v in row {
                let _ = write!(out, " {v:?}");
            }
            out.push('\n');
        }
        out
    }

    pub fn from_checkpoint(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        if lines.next() != Some(CHECKPOINT_MAGIC) {
            return Err(bad("missing or unsupported version header"));
        }
        let temperature = lines
            .next()
            .and_then(|l| l.strip_prefix("temperature "))
            .and_then(|v| v.parse::<f64>().ok())
            .ok_or_else(|| bad("bad temperature line"))?;
        let n = lines
            .next()
            .and_then(|l| l.strip_prefix("rows "))
            .and_then(|v| v.parse::<usize>().ok())
            .ok_or_else(|| bad("bad rows line"))?;
        let mut logits = Vec::with_capacity(n);
        for (expected, line) in lines.enumerate().take(n) {
            let mut fields = line.split_ascii_whitespace();
            let key: usize = fields
                .next()
                .and_then(|f| f.parse().ok())
                .ok_or_else(|| bad("bad row key"))?;
            if key != expected {
                return Err(bad(&format!("row {key} out of order, expected {expected}")));
            }
            let mut row = [0.0; NUM_ACTIONS];
            for slot in row.iter_mut() {
                *slot = fields
                    .next()
                    .and_then(|f| f.parse().ok())
                    .ok_or_else(|| bad(&format!("row {key} has a bad logit")))?;
            }
            if fields.next().is_some() {
                return Err(bad(&format!("row {key} has extra fields")));
            }
            logits.push(row);
        }
        if logits.len() != n {
            return Err(bad("fewer rows than declared"));
        }
        Self::from_rows(logits, temperature)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_checkpoint())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_checkpoint(&std::fs::read_to_string(path)?)
    }
}

pub fn softmax(logits: &Row, temperature: f64) -> Row {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out = [0.0; NUM_ACTIONS];
    let mut sum = 0.0;
    for (o, &l) in out.iter_mut().zip(logits) {
        *o = ((l - max) / temperature).exp();
        sum += *o;
    }
    for o in &mut out {
        *o /= sum;
    }
    out
}

pub fn log_softmax(logits: &Row, temperature: f64) -> Row {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = logits
        .iter()
        .map(|&l| ((l - max) / temperature).exp())
        .sum::<f64>()
        .ln();
    let mut out = [0.0; NUM_ACTIONS];
    for (o, &l) in out.iter_mut().zip(logits) {
        *o = (l - max) / temperature - lse;
    }
    out
}

/// Sparse gradient over logit rows.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScoreGradient {
    rows: BTreeMap<StateKey, Row>,
}

impl ScoreGradient {
    pub fn is_zero(&self) -> bool {
        self.rows.values().flatten().all(|&v| v == 0.0)
    }

    pub fn rows(&self) -> impl Iterator<Item = (StateKey, &Row)> {
        self.rows.iter().map(|(k, r)| (*k, r))
    }

    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn get(&self, key: StateKey, action: Action) -> f64 {
        self.rows.get(&key).map_or(0.0, |r| r[action.index()])
    }

    pub fn row(&self, key: StateKey) -> Option<&Row> {
        self.rows.get(&key)
    }

    pub fn add_entry(&mut self, key: StateKey, action: Action, value: f64) {
        self.rows.entry(key).or_insert([0.0; NUM_ACTIONS])[action.index()] += value;
    }

    /// self += weight * d log pi(action | key)
    pub fn add_logprob_grad(
        &mut self,
        policy: &PolicyTable,
        key: StateKey,
        action: Action,
        weight: f64,
    ) {
        let probs = policy.action_distribution(key);
        let scale = weight / policy.temperature;
        let row = self.rows.entry(key).or_insert([0.0; NUM_ACTIONS]);
        for (j, (r, p)) in row.iter_mut().zip(probs).enumerate() {
            let indicator = if j == action.index() { 1.0 } else { 0.0 };
            *r += scale * (indicator - p);
        }
    }

    /// self += weight * other
    pub fn add_scaled(&mut self, other: &ScoreGradient, weight: f64) {
        for (&key, row) in &other.rows {
            let target = self.rows.entry(key).or_insert([0.0; NUM_ACTIONS]);
            for (t, v) in target.iter_mut().zip(row) {
                *t += weight * v;
            }
        }
    }

    pub fn scaled(&self, factor: f64) -> ScoreGradient {
        let mut out = self.clone();
        for row in out.rows.values_mut() {
            for v in row.iter_mut() {
                *v *= factor;
            }
        }
        out
    }

    pub fn dot(&self, other: &ScoreGradient) -> f64 {
        self.rows
            .iter()
            .filter_map(|(k, r)| other.rows.get(k).map(|o| (r, o)))
            .map(|(r, o)| r.iter().zip(o).map(|(a, b)| a * b).sum::<f64>())
            .sum()
    }

    pub fn norm_sq(&self) -> f64 {
        self.rows.values().flatten().fold(0.0, |acc, v| acc + v * v)
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    /// Largest absolute entry difference, over the union of rows.
    pub fn max_abs_diff(&self, other: &ScoreGradient) -> f64 {
        let mut worst: f64 = 0.0;
        for key in self.rows.keys().chain(other.rows.keys()) {
            let a = self.rows.get(key).copied().unwrap_or([0.0; NUM_ACTIONS]);
            let b = other.rows.get(key).copied().unwrap_or([0.0; NUM_ACTIONS]);
            for (x, y) in a.iter().zip(&b) {
                worst = worst.max((x - y).abs());
            }
        }
        worst
    }

    /// Dense copy over `num_rows` rows, row-major with eight actions each.
    pub fn to_dense(&self, num_rows: usize) -> Vec<f64> {
        let mut out = vec![0.0; num_rows * NUM_ACTIONS];
        for (key, row) in &self.rows {
            out[key.0 * NUM_ACTIONS..(key.0 + 1) * NUM_ACTIONS].copy_from_slice(row);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gridworld::Action;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_policy(rng: &mut ChaCha8Rng, rows: usize, spread: f64) -> PolicyTable {
        let logits = (0..rows)
            .map(|_| std::array::from_fn(|_| rng.random_range(-spread..=spread)))
            .collect();
        PolicyTable::from_rows(logits, 1.0).unwrap()
    }

    #[test]
    fn zero_logits_are_uniform() {
        let p = PolicyTable::uniform(3, 1.0);
        for v in p.action_distribution(StateKey(1)) {
            assert!((v - 0.125).abs() < 1e-15);
        }
    }

    #[test]
    fn saturated_row() {
        let mut p = PolicyTable::uniform(1, 1.0);
        p.set_logit(StateKey(0), Action::SE, 50.0);
        assert!(p.prob(StateKey(0), Action::SE) > 1.0 - 1e-9);
    }

    #[test]
    fn single_unit_logit_matches_hand_value() {
        let mut p = PolicyTable::uniform(1, 1.0);
        p.set_logit(StateKey(0), Action::N, 1.0);
        let e = std::f64::consts::E;
        let expected = e / (e + 7.0);
        assert!((p.prob(StateKey(0), Action::N) - expected).abs() < 1e-15);
        assert!((expected - 0.2797).abs() < 1e-4);
    }

    #[test]
    fn deterministic_row_always_samples_its_action() {
        let mut p = PolicyTable::uniform(1, 1.0);
        p.set_logit(StateKey(0), Action::W, 60.0);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..1000 {
            assert_eq!(p.sample_action(StateKey(0), &mut rng), Action::W);
        }
    }

    #[test]
    fn uniform_sampling_frequencies_within_binomial_band() {
        let p = PolicyTable::uniform(1, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 80_000;
        let mut counts = [0usize; NUM_ACTIONS];
        for _ in 0..n {
            counts[p.sample_action(StateKey(0), &mut rng).index()] += 1;
        }
        let sigma = (n as f64 * 0.125 * 0.875).sqrt();
        for c in counts {
            assert!((c as f64 - n as f64 * 0.125).abs() <= 3.0 * sigma, "{counts:?}");
        }
    }

    #[test]
    fn sampling_is_seed_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = random_policy(&mut rng, 4, 2.0);
        let a = p.sample_action(StateKey(2), &mut ChaCha8Rng::seed_from_u64(99));
        let b = p.sample_action(StateKey(2), &mut ChaCha8Rng::seed_from_u64(99));
        assert_eq!(a, b);
    }

    #[test]
    fn uniform_logprob_grad_entries() {
        let p = PolicyTable::uniform(2, 1.0);
        let g = p.logprob_grad(StateKey(1), Action::E);
        for a in Action::ALL {
            let expected = if a == Action::E { 7.0 / 8.0 } else { -1.0 / 8.0 };
            assert!((g.get(StateKey(1), a) - expected).abs() < 1e-15);
        }
        assert_eq!(g.num_rows(), 1);
        assert!(g.row(StateKey(1)).unwrap().iter().sum::<f64>().abs() < 1e-15);
    }

    #[test]
    fn traj_score_edge_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = random_policy(&mut rng, 5, 2.0);
        let t = Token::new(StateKey(3), Action::S);
        let single = p.traj_score(&[t]);
        assert!(single.max_abs_diff(&p.logprob_grad(t.key, t.action)) < 1e-15);
        let repeated = p.traj_score(&[t; 6]);
        assert!(repeated.max_abs_diff(&p.logprob_grad(t.key, t.action)) < 1e-14);
        assert!(p.traj_score(&[]).is_zero());
    }

    #[test]
    fn traj_score_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let p = random_policy(&mut rng, 6, 2.0);
        let tokens: Vec<Token> = (0..12)
            .map(|_| {
                Token::new(
                    StateKey(rng.random_range(0..6)),
                    Action::ALL[rng.random_range(0..8)],
                )
            })
            .collect();
        let analytic = p.traj_score(&tokens);
        let objective = |q: &PolicyTable| q.sequence_log_prob(&tokens) / tokens.len() as f64;
        let h = 1e-5;
        for k in 0..6 {
            for a in Action::ALL {
                let mut plus = p.clone();
                let mut minus = p.clone();
                let v = p.row(StateKey(k))[a.index()];
                plus.set_logit(StateKey(k), a, v + h);
                minus.set_logit(StateKey(k), a, v - h);
                let numeric = (objective(&plus) - objective(&minus)) / (2.0 * h);
                let exact = analytic.get(StateKey(k), a);
                assert!(
                    (exact - numeric).abs() <= 1e-5 * exact.abs().max(1e-3),
                    "row {k} {a}: {exact} vs {numeric}"
                );
            }
        }
    }

    #[test]
    fn update_edge_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let p = random_policy(&mut rng, 4, 1.0);
        let mut q = p.clone();
        q.apply_update(&ScoreGradient::default(), 0.3).unwrap();
        assert_eq!(p, q);
        let g = p.logprob_grad(StateKey(1), Action::N);
        q.apply_update(&g, 0.0).unwrap();
        assert_eq!(p, q);
        let mut single = ScoreGradient::default();
        single.add_entry(StateKey(2), Action::SW, 1.0);
        q.apply_update(&single, 0.1).unwrap();
        for k in 0..4 {
            for a in Action::ALL {
                let before = p.row(StateKey(k))[a.index()];
                let after = q.row(StateKey(k))[a.index()];
                if (k, a) == (2, Action::SW) {
                    assert!((after - before - 0.1).abs() < 1e-15);
                } else {
                    assert_eq!(before.to_bits(), after.to_bits());
                }
            }
        }
    }

    #[test]
    fn non_finite_gradient_rejected_without_mutation() {
        let mut p = PolicyTable::uniform(3, 1.0);
        let mut g = ScoreGradient::default();
        g.add_entry(StateKey(0), Action::N, 1.0);
        g.add_entry(StateKey(1), Action::E, f64::NAN);
        let before = p.clone();
        assert!(matches!(
            p.apply_update(&g, 0.1),
            Err(Error::NonFiniteGradient { key: 1, action: 2 })
        ));
        assert_eq!(p, before);
        assert!(p.apply_update(&ScoreGradient::default(), f64::INFINITY).is_err());
    }

    #[test]
    fn finite_difference_check_regimes() {
        let p = PolicyTable::uniform(1, 1.0);
        assert!(p.finite_diff_check(StateKey(0), Action::N, 1e-5).unwrap() <= 1e-6);

        let mut sat = PolicyTable::uniform(1, 1.0);
        sat.set_logit(StateKey(0), Action::E, 50.0);
        for a in Action::ALL {
            assert!(sat.finite_diff_check(StateKey(0), a, 1e-5).unwrap() <= 1e-4);
        }

        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let r = random_policy(&mut rng, 1, 2.0);
        for a in Action::ALL {
            assert!(r.finite_diff_check(StateKey(0), a, 1e-5).unwrap() <= 1e-5);
        }
        assert!(r.finite_diff_check(StateKey(0), Action::N, 1e-2).is_err());
    }

    #[test]
    fn checkpoint_is_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = random_policy(&mut rng, 7, 3.0).with_temperature(0.7);
        let text = p.to_checkpoint();
        let q = PolicyTable::from_checkpoint(&text).unwrap();
        assert_eq!(p.temperature().to_bits(), q.temperature().to_bits());
        for (a, b) in p.rows().iter().zip(q.rows()) {
            for (x, y) in a.iter().zip(b) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
        assert!(PolicyTable::from_checkpoint("offrail-policy v0\n").is_err());
        let truncated: String = text.lines().take(4).collect::<Vec<_>>().join("\n");
        assert!(PolicyTable::from_checkpoint(&truncated).is_err());
    }

    proptest! {
        #[test]
        fn gradient_rows_sum_to_zero(
            logits in prop::array::uniform8(-5.0f64..5.0),
            a in 0usize..8,
            temp in 0.2f64..3.0,
        ) {
            let p = PolicyTable::from_rows(vec![logits], temp).unwrap();
            let g = p.logprob_grad(StateKey(0), Action::ALL[a]);
            prop_assert!(g.row(StateKey(0)).unwrap().iter().sum::<f64>().abs() < 1e-10);
            let probs = p.action_distribution(StateKey(0));
            prop_assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(probs.iter().all(|&v| v > 0.0));
        }

        #[test]
        fn temperature_scaling(
            logits in prop::array::uniform8(-3.0f64..3.0),
            a in 0usize..8,
            c in 0.25f64..4.0,
        ) {
            // Same distribution at temperature c (logits scaled by c): every entry divides by c.
            let p = PolicyTable::from_rows(vec![logits], 1.0).unwrap();
            let scaled = PolicyTable::from_rows(vec![logits.map(|v| v * c)], c).unwrap();
            let gp = p.logprob_grad(StateKey(0), Action::ALL[a]);
            let gs = scaled.logprob_grad(StateKey(0), Action::ALL[a]);
            for j in Action::ALL {
                prop_assert!((gs.get(StateKey(0), j) - gp.get(StateKey(0), j) / c).abs() < 1e-12);
            }
            // Changing only the temperature keeps the argmax.
            let argmax = |r: &Row| r.iter().enumerate().fold(0, |b, (i, v)| if *v > r[b] { i } else { b });
            let warmer = p.clone().with_temperature(c);
            prop_assert_eq!(
                argmax(&p.action_distribution(StateKey(0))),
                argmax(&warmer.action_distribution(StateKey(0)))
            );
        }

        #[test]
        fn update_then_negated_update_restores(
            logits in prop::array::uniform8(-2.0f64..2.0),
            a in 0usize..8,
            step in -1.0f64..1.0,
        ) {
            let p = PolicyTable::from_rows(vec![logits], 1.0).unwrap();
            let g = p.logprob_grad(StateKey(0), Action::ALL[a]);
            let mut q = p.clone();
            q.apply_update(&g, step).unwrap();
            q.apply_update(&g.scaled(-1.0), step).unwrap();
            for (x, y) in p.row(StateKey(0)).iter().zip(q.row(StateKey(0))) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }
    }
}

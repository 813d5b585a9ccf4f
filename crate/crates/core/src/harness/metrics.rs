//! Training histories, CSV emission and cross-seed summaries.
//!
//! `checkpoints.csv` columns: mode, seed, step, success_rate, retention_rate,
//! polluter_win_rate, recovery_rate, grad_norm, guide_grad_norm, lambda,
//! buffer_size. success_rate and retention_rate are fractions of
//! `eval_rollouts` sampled rollouts from the misleading and clean starts.
//! The two self-play columns are empty in other modes: polluter_win_rate is
//! the polluter reward of the latest update, recovery_rate the mean success
//! over the held-out corruption suite. Gradient columns describe the most
//! recent update before the checkpoint.
//!
//! `steps.csv` columns: mode, seed, step, role, k, group_size, mean_reward,
//! grad_norm, guide_grad_norm, lambda, buffer_size, harvested, alpha.
//!
//! Self-play runs add `selfplay.csv` with seed, step, role, alpha,
//! polluter_win_rate, agent_recovery_rate, grad_norm, guide_grad_norm. The two
//! rates are complements on every row.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::harness::config::{ExperimentConfig, Mode};
use crate::selfplay::{
    adversarial_recovery_by_quarter, block_win_rates, held_out_recovery_by_quarter, write_selfplay_csv,
    SelfplayRun,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointRecord {
    pub mode: Mode,
    pub seed: u64,
    pub step: usize,
    pub success_rate: f64,
    pub retention_rate: f64,
    pub polluter_win_rate: Option<f64>,
    pub recovery_rate: Option<f64>,
    pub grad_norm: f64,
    pub guide_grad_norm: f64,
    pub lambda: f64,
    pub buffer_size: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Agent,
    Polluter,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub mode: Mode,
    pub seed: u64,
    pub step: usize,
    pub role: Role,
    pub k: usize,
    pub group_size: usize,
    pub mean_reward: f64,
    pub grad_norm: f64,
    pub guide_grad_norm: f64,
    pub lambda: f64,
    pub buffer_size: usize,
    pub harvested: usize,
    pub alpha: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingHistory {
    pub mode: Mode,
    pub seed: u64,
    pub checkpoints: Vec<CheckpointRecord>,
    pub steps: Vec<StepRecord>,
}

impl TrainingHistory {
    pub fn new(mode: Mode, seed: u64) -> Self {
        Self {
            mode,
            seed,
            checkpoints: Vec::new(),
            steps: Vec::new(),
        }
    }

    pub fn last(&self) -> Option<&CheckpointRecord> {
        self.checkpoints.last()
    }

    pub fn min_retention(&self) -> Option<f64> {
        self.checkpoints
            .iter()
            .map(|c| c.retention_rate)
            .min_by(f64::total_cmp)
    }

    /// Checks that rates are fractions and checkpoints are ordered by step.
    pub fn validate(&self) -> Result<()> {
        let fraction = |v: f64| (0.0..=1.0).contains(&v);
        for c in &self.checkpoints {
            let optional = [c.polluter_win_rate, c.recovery_rate];
            if !fraction(c.success_rate)
                || !fraction(c.retention_rate)
                || optional.iter().flatten().any(|&v| !fraction(v))
            {
                return Err(Error::InvalidState(format!(
                    "seed {} step {}: rate outside [0, 1]",
                    self.seed, c.step
                )));
            }
        }
        if self.checkpoints.windows(2).any(|w| w[0].step >= w[1].step) {
            return Err(Error::InvalidState(format!(
                "seed {}: checkpoints out of order",
                self.seed
            )));
        }
        Ok(())
    }

    /// First checkpoint step whose success rate reaches `threshold`.
    pub fn steps_to(&self, threshold: f64) -> Option<usize> {
        self.checkpoints
            .iter()
            .find(|c| c.success_rate >= threshold - 1e-12)
            .map(|c| c.step)
    }
}

pub fn write_checkpoints_csv<'a, W: Write>(
    out: W,
    histories: impl IntoIterator<Item = &'a TrainingHistory>,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for h in histories {
        for c in &h.checkpoints {
            w.serialize(c)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_steps_csv<'a, W: Write>(
    out: W,
    histories: impl IntoIterator<Item = &'a TrainingHistory>,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for h in histories {
        for s in &h.steps {
            w.serialize(s)?;
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    /// Population statistics; NaN for empty input.
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Self {
            mean,
            std: var.sqrt(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub seed: u64,
    pub final_success: f64,
    pub final_retention: f64,
    pub min_retention: f64,
    pub steps_to_90: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mode: Mode,
    pub seeds: Vec<SeedSummary>,
    pub final_success: MeanStd,
    pub final_retention: MeanStd,
}

impl Summary {
    pub fn from_histories(mode: Mode, histories: &[TrainingHistory]) -> Self {
        let seeds: Vec<SeedSummary> = histories
            .iter()
            .filter_map(|h| {
                let last = h.last()?;
                Some(SeedSummary {
                    seed: h.seed,
                    final_success: last.success_rate,
                    final_retention: last.retention_rate,
                    min_retention: h.min_retention().unwrap_or(f64::NAN),
                    steps_to_90: h.steps_to(0.9),
                })
            })
            .collect();
        let success: Vec<f64> = seeds.iter().map(|s| s.final_success).collect();
        let retention: Vec<f64> = seeds.iter().map(|s| s.final_retention).collect();
        Self {
            mode,
            final_success: MeanStd::of(&success),
            final_retention: MeanStd::of(&retention),
            seeds,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelfplaySeedSummary {
    pub seed: u64,
    pub final_recovery: f64,
    /// Held-out suite recovery averaged over each quarter of the checkpoints.
    pub held_out_quarters: Option<[f64; 4]>,
    /// Agent success under the training-time windows, per quarter of the steps.
    pub adversarial_quarters: Option<[f64; 4]>,
    pub block_win_rates: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelfplaySummary {
    pub frozen_polluter: bool,
    pub seeds: Vec<SelfplaySeedSummary>,
    pub final_recovery: MeanStd,
}

impl SelfplaySummary {
    pub fn from_runs(frozen_polluter: bool, runs: &[SelfplayRun]) -> Self {
        let seeds: Vec<SelfplaySeedSummary> = runs
            .iter()
            .map(|r| SelfplaySeedSummary {
                seed: r.history.seed,
                final_recovery: r.final_recovery,
                held_out_quarters: held_out_recovery_by_quarter(&r.history).ok(),
                adversarial_quarters: adversarial_recovery_by_quarter(&r.history).ok(),
                block_win_rates: block_win_rates(&r.history),
            })
            .collect();
        let finals: Vec<f64> = seeds.iter().map(|s| s.final_recovery).collect();
        Self {
            frozen_polluter,
            final_recovery: MeanStd::of(&finals),
            seeds,
        }
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Writes the resolved config, the layout and its hash into `dir`.
pub fn write_provenance(dir: &Path, config: &ExperimentConfig) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let maze = config.maze_bytes()?;
    std::fs::write(dir.join("config.resolved.toml"), config.to_toml())?;
    std::fs::write(dir.join("maze.txt"), &maze)?;
    std::fs::write(dir.join("maze.sha256"), format!("{}\n", sha256_hex(&maze)))?;
    Ok(())
}

/// Writes checkpoints.csv, steps.csv, summary.json and provenance files.
pub fn write_run(dir: &Path, config: &ExperimentConfig, histories: &[TrainingHistory]) -> Result<()> {
    write_provenance(dir, config)?;
    write_checkpoints_csv(std::fs::File::create(dir.join("checkpoints.csv"))?, histories)?;
    write_steps_csv(std::fs::File::create(dir.join("steps.csv"))?, histories)?;
    let summary = Summary::from_histories(config.mode, histories);
    std::fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;
    Ok(())
}

/// `write_run` plus selfplay.csv and selfplay_summary.json.
pub fn write_selfplay_run(dir: &Path, config: &ExperimentConfig, runs: &[SelfplayRun]) -> Result<()> {
    let histories: Vec<TrainingHistory> = runs.iter().map(|r| r.history.clone()).collect();
    write_run(dir, config, &histories)?;
    write_selfplay_csv(std::fs::File::create(dir.join("selfplay.csv"))?, &histories)?;
    let summary = SelfplaySummary::from_runs(config.freeze_polluter, runs);
    std::fs::write(
        dir.join("selfplay_summary.json"),
        serde_json::to_string_pretty(&summary)?,
    )?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn checkpoint(step: usize, success: f64, retention: f64) -> CheckpointRecord {
        CheckpointRecord {
            mode: Mode::RecoveryGrpo,
            seed: 1,
            step,
            success_rate: success,
            retention_rate: retention,
            polluter_win_rate: None,
            recovery_rate: None,
            grad_norm: 0.0,
            guide_grad_norm: 0.0,
            lambda: 0.0,
            buffer_size: 0,
        }
    }

    #[test]
    fn history_queries() {
        let mut h = TrainingHistory::new(Mode::RecoveryGrpo, 1);
        h.checkpoints = vec![
            checkpoint(0, 0.0, 1.0),
            checkpoint(10, 0.9, 0.8),
            checkpoint(20, 1.0, 0.9),
        ];
        assert_eq!(h.steps_to(0.9), Some(10));
        assert_eq!(h.min_retention(), Some(0.8));
        assert_eq!(h.steps_to(1.1), None);
    }

    #[test]
    fn csv_has_header_and_empty_optional() {
        let mut h = TrainingHistory::new(Mode::RecoveryGrpo, 1);
        h.checkpoints.push(checkpoint(0, 0.5, 1.0));
        let mut buf = Vec::new();
        write_checkpoints_csv(&mut buf, [&h]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "mode,seed,step,success_rate,retention_rate,polluter_win_rate,recovery_rate,grad_norm,guide_grad_norm,lambda,buffer_size"
        );
        assert_eq!(lines.next().unwrap(), "recovery-grpo,1,0,0.5,1.0,,,0.0,0.0,0.0,0");
    }

    #[test]
    fn validation_catches_bad_rates_and_order() {
        let mut h = TrainingHistory::new(Mode::RecoveryGrpo, 1);
        h.checkpoints = vec![checkpoint(0, 0.0, 1.0), checkpoint(10, 0.5, 1.0)];
        assert!(h.validate().is_ok());
        h.checkpoints[1].recovery_rate = Some(1.5);
        assert!(h.validate().is_err());
        h.checkpoints[1].recovery_rate = None;
        h.checkpoints.swap(0, 1);
        assert!(h.validate().is_err());
    }

    #[test]
    fn mean_std_population() {
        let m = MeanStd::of(&[1.0, 3.0]);
        assert_eq!((m.mean, m.std), (2.0, 1.0));
    }

    #[test]
    fn provenance_files_written() {
        let dir = tempfile::tempdir().unwrap();
        write_provenance(dir.path(), &ExperimentConfig::default()).unwrap();
        let hash = std::fs::read_to_string(dir.path().join("maze.sha256")).unwrap();
        assert_eq!(hash.trim().len(), 64);
        assert!(dir.path().join("config.resolved.toml").exists());
    }
}

//! Experiment configuration: TOML key/value text with documented defaults.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize};

use crate::error::{Error, Result};
use crate::gridworld::{canonical_layout_text, canonical_maze, GridWorld};
use crate::grpo::{GrpoConfig, DEFAULT_EPS_NORM};
use crate::guidance::GuidanceConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Rail,
    RecoveryGrpo,
    RecoveryGuided,
    /// Clones one fixed low-likelihood repair instead of harvested ones.
    RecoveryOodClone,
    Selfplay,
    Analyze,
}

impl Mode {
    pub const ALL: [Mode; 6] = [
        Mode::Rail,
        Mode::RecoveryGrpo,
        Mode::RecoveryGuided,
        Mode::RecoveryOodClone,
        Mode::Selfplay,
        Mode::Analyze,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Mode::Rail => "rail",
            Mode::RecoveryGrpo => "recovery-grpo",
            Mode::RecoveryGuided => "recovery-guided",
            Mode::RecoveryOodClone => "recovery-ood-clone",
            Mode::Selfplay => "selfplay",
            Mode::Analyze => "analyze",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Mode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config {
                key: "mode".into(),
                message: format!("unknown mode `{s}`"),
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub mode: Mode,
    /// Layout file; the bundled canonical maze when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub maze: Option<PathBuf>,
    pub stage1_steps: usize,
    pub stage2_steps: usize,
    pub group_size: usize,
    pub group_size_polluter: usize,
    pub clip_eps: f64,
    /// Stage-1 step size.
    pub lr_rail: f64,
    /// Recovery and self-play agent step size.
    pub lr_agent: f64,
    pub lr_polluter: f64,
    pub temperature: f64,
    pub lambda0: f64,
    pub anneal_start_fraction: f64,
    pub minibatch_size: usize,
    pub buffer_capacity: usize,
    pub eval_every: usize,
    pub eval_rollouts: usize,
    pub stage1_threshold: f64,
    pub stage1_eval_rollouts: usize,
    pub rail_rollouts: usize,
    pub ood_likelihood_ratio: f64,
    /// Self-play length in updates (agent and polluter steps together).
    pub selfplay_steps: usize,
    pub block_len: usize,
    pub freeze_polluter: bool,
    #[serde(deserialize_with = "deserialize_seeds")]
    pub seeds: Vec<u64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            mode: Mode::RecoveryGuided,
            maze: None,
            stage1_steps: 800,
            stage2_steps: 2000,
            group_size: 16,
            group_size_polluter: 16,
            clip_eps: 0.2,
            lr_rail: 20.0,
            lr_agent: 5.0,
            lr_polluter: 5.0,
            temperature: 1.0,
            lambda0: 0.07,
            anneal_start_fraction: 0.5,
            minibatch_size: 16,
            buffer_capacity: 256,
            eval_every: 10,
            eval_rollouts: 10,
            stage1_threshold: 0.95,
            stage1_eval_rollouts: 200,
            rail_rollouts: 200,
            ood_likelihood_ratio: 10.0,
            selfplay_steps: 400,
            block_len: 5,
            freeze_polluter: false,
            seeds: vec![42, 52, 62, 72, 82],
        }
    }
}

fn deserialize_seeds<'de, D: Deserializer<'de>>(de: D) -> std::result::Result<Vec<u64>, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        List(Vec<u64>),
        Text(String),
        One(u64),
    }
    match Raw::deserialize(de)? {
        Raw::List(v) => Ok(v),
        Raw::One(s) => Ok(vec![s]),
        Raw::Text(s) => s
            .split(',')
            .map(|p| p.trim())
            .filter(|p| !p.is_empty())
            .map(|p| p.parse::<u64>().map_err(serde::de::Error::custom))
            .collect(),
    }
}

fn config_err(key: &str, message: impl Into<String>) -> Error {
    Error::Config {
        key: key.into(),
        message: message.into(),
    }
}

impl ExperimentConfig {
    pub fn grpo(&self) -> GrpoConfig {
        GrpoConfig {
            group_size: self.group_size,
            clip_eps: self.clip_eps,
            lr: self.lr_agent,
            eps_norm: DEFAULT_EPS_NORM,
        }
    }

    pub fn rail_grpo(&self) -> GrpoConfig {
        GrpoConfig {
            lr: self.lr_rail,
            ..self.grpo()
        }
    }

    pub fn polluter_grpo(&self) -> GrpoConfig {
        GrpoConfig {
            group_size: self.group_size_polluter,
            clip_eps: self.clip_eps,
            lr: self.lr_polluter,
            eps_norm: DEFAULT_EPS_NORM,
        }
    }

    pub fn guidance(&self) -> GuidanceConfig {
        GuidanceConfig {
            lambda0: self.lambda0,
            anneal_start_fraction: self.anneal_start_fraction,
            minibatch_size: self.minibatch_size,
            buffer_capacity: self.buffer_capacity,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("group_size", self.group_size),
            ("group_size_polluter", self.group_size_polluter),
            ("minibatch_size", self.minibatch_size),
            ("buffer_capacity", self.buffer_capacity),
            ("eval_every", self.eval_every),
            ("eval_rollouts", self.eval_rollouts),
            ("stage1_eval_rollouts", self.stage1_eval_rollouts),
            ("rail_rollouts", self.rail_rollouts),
            ("block_len", self.block_len),
        ];
        for (key, value) in positive {
            if value == 0 {
                return Err(config_err(key, "must be positive"));
            }
        }
        if self.group_size < 2 {
            return Err(config_err("group_size", "must be at least 2"));
        }
        if self.group_size_polluter < 2 {
            return Err(config_err("group_size_polluter", "must be at least 2"));
        }
        if !(self.clip_eps > 0.0 && self.clip_eps < 1.0) {
            return Err(config_err("clip_eps", "must lie in (0, 1)"));
        }
        for (key, value) in [
            ("lr_rail", self.lr_rail),
            ("lr_agent", self.lr_agent),
            ("lr_polluter", self.lr_polluter),
        ] {
            if !(value.is_finite() && value >= 0.0) {
                return Err(config_err(key, format!("must be finite and non-negative, got {value}")));
            }
        }
        if !(self.temperature.is_finite() && self.temperature > 0.0) {
            return Err(config_err("temperature", "must be positive"));
        }
        if !(self.lambda0.is_finite() && self.lambda0 >= 0.0) {
            return Err(config_err("lambda0", "must be non-negative"));
        }
        if !(0.0..=1.0).contains(&self.anneal_start_fraction) {
            return Err(config_err("anneal_start_fraction", "must lie in [0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.stage1_threshold) {
            return Err(config_err("stage1_threshold", "must lie in [0, 1]"));
        }
        if !(self.ood_likelihood_ratio.is_finite() && self.ood_likelihood_ratio >= 1.0) {
            return Err(config_err("ood_likelihood_ratio", "must be at least 1"));
        }
        if self.seeds.is_empty() {
            return Err(config_err("seeds", "at least one seed is required"));
        }
        Ok(())
    }

    /// Loads the configured layout.
    pub fn world(&self) -> Result<GridWorld> {
        match &self.maze {
            Some(path) => GridWorld::load_layout(path),
            None => Ok(canonical_maze()),
        }
    }

    /// Raw bytes of the layout, used for the provenance hash.
    pub fn maze_bytes(&self) -> Result<Vec<u8>> {
        match &self.maze {
            Some(path) => Ok(std::fs::read(path)?),
            None => Ok(canonical_layout_text().as_bytes().to_vec()),
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Applies `key=value` overrides on top of this config.
    pub fn with_overrides<S: AsRef<str>>(&self, overrides: &[S]) -> Result<Self> {
        let mut table: toml::Table = toml::from_str(&self.to_toml()).expect("round trip");
        for item in overrides {
            let (key, value) = split_override(item.as_ref())?;
            table.insert(key.to_string(), value);
        }
        from_table(table)
    }
}

fn split_override(item: &str) -> Result<(&str, toml::Value)> {
    let (key, raw) = item
        .split_once('=')
        .ok_or_else(|| config_err(item, "override must look like key=value"))?;
    let key = key.trim();
    let raw = raw.trim();
    // Bare words (mode names, paths) are taken as strings.
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    Ok((key, value))
}

/// Every key accepted in config text.
pub const KNOWN_KEYS: &[&str] = &[
    "mode",
    "maze",
    "stage1_steps",
    "stage2_steps",
    "group_size",
    "group_size_polluter",
    "clip_eps",
    "lr_rail",
    "lr_agent",
    "lr_polluter",
    "temperature",
    "lambda0",
    "anneal_start_fraction",
    "minibatch_size",
    "buffer_capacity",
    "eval_every",
    "eval_rollouts",
    "stage1_threshold",
    "stage1_eval_rollouts",
    "rail_rollouts",
    "ood_likelihood_ratio",
    "selfplay_steps",
    "block_len",
    "freeze_polluter",
    "seeds",
];

fn from_table(table: toml::Table) -> Result<ExperimentConfig> {
    if let Some(key) = table.keys().find(|k| !KNOWN_KEYS.contains(&k.as_str())) {
        return Err(config_err(key, "unknown key"));
    }
    let config = match table.clone().try_into::<ExperimentConfig>() {
        Ok(c) => c,
        Err(err) => {
            // Re-deserialize key by key to name the offender.
            let key = table
                .iter()
                .find(|(k, v)| {
                    let mut single = toml::Table::new();
                    single.insert((*k).clone(), (*v).clone());
                    single.try_into::<ExperimentConfig>().is_err()
                })
                .map_or_else(|| "<config>".to_string(), |(k, _)| k.clone());
            return Err(config_err(&key, err.message().trim().to_string()));
        }
    };
    config.validate()?;
    Ok(config)
}

/// Parses config text; missing keys take their defaults.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let table: toml::Table = toml::from_str(text).map_err(|e| config_err("<syntax>", e.message()))?;
    from_table(table)
}

pub fn load_config(path: impl AsRef<Path>) -> Result<ExperimentConfig> {
    parse_config(&std::fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn key_of(err: Error) -> String {
        match err {
            Error::Config { key, .. } => key,
            other => panic!("expected a config error, got {other}"),
        }
    }

    #[test]
    fn empty_text_gives_defaults() {
        assert_eq!(parse_config("").unwrap(), ExperimentConfig::default());
    }

    #[test]
    fn seeds_from_comma_list() {
        let c = parse_config("seeds = \"42,52,62\"").unwrap();
        assert_eq!(c.seeds, vec![42, 52, 62]);
        let c = parse_config("seeds = [1, 2]").unwrap();
        assert_eq!(c.seeds, vec![1, 2]);
    }

    #[test]
    fn negative_learning_rate_rejected() {
        assert_eq!(key_of(parse_config("lr_agent = -1").unwrap_err()), "lr_agent");
    }

    #[test]
    fn unknown_key_named() {
        assert_eq!(key_of(parse_config("lr_agnet = 1.0").unwrap_err()), "lr_agnet");
    }

    #[test]
    fn wrong_type_named() {
        assert_eq!(key_of(parse_config("group_size = \"big\"").unwrap_err()), "group_size");
        assert_eq!(key_of(parse_config("mode = \"sideways\"").unwrap_err()), "mode");
    }

    #[test]
    fn empty_seed_list_rejected() {
        assert_eq!(key_of(parse_config("seeds = \"\"").unwrap_err()), "seeds");
    }

    #[test]
    fn resolved_config_round_trips() {
        let c = parse_config("mode = \"selfplay\"\nseeds = \"7\"\nlambda0 = 0.1").unwrap();
        assert_eq!(parse_config(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn overrides_accept_bare_words() {
        let c = ExperimentConfig::default()
            .with_overrides(&["mode=recovery-grpo", "group_size=8", "seeds=1,2"])
            .unwrap();
        assert_eq!(c.mode, Mode::RecoveryGrpo);
        assert_eq!(c.group_size, 8);
        assert_eq!(c.seeds, vec![1, 2]);
        assert!(ExperimentConfig::default().with_overrides(&["nokey"]).is_err());
    }
}

//! Command-line front end. Every config key is also a global flag
//! (`--stage2-steps 500`); `--set key=value` and `--config file.toml` work too.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Arg, ArgAction, ArgMatches, Args, Command, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use offrail::harness::config::KNOWN_KEYS;
use offrail::harness::metrics::{write_provenance, SelfplaySummary, Summary};
use offrail::harness::{
    load_config, run_drift, run_gain, run_gradcheck, run_scarcity, run_selfplay, run_snr, run_two_stage,
    train_rail, write_run, write_selfplay_run, ExperimentConfig, GainSettings, Mode, SnrSettings,
    TrainingHistory,
};
use offrail::{Error, Result};

#[derive(Parser)]
#[command(name = "offrail", version, about = "Off-rail recovery experiments on a grid maze")]
struct Cli {
    /// TOML config file; missing keys take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Config override, repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Stage 1 only: train the rail policy from the clean start.
    TrainRail,
    /// Both stages with the chosen recovery method.
    TrainRecovery(RecoveryArgs),
    /// Stage 1 followed by polluter/agent self-play.
    Selfplay(SelfplayArgs),
    /// Analysis reports written as JSON.
    Analyze {
        #[arg(value_enum)]
        what: Analysis,
    },
    /// Finite-difference checks of the softmax score.
    Gradcheck {
        #[arg(long, default_value_t = 100)]
        checks: usize,
        #[arg(long, default_value_t = 1e-5)]
        tolerance: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Args)]
struct RecoveryArgs {
    #[arg(long, value_enum, default_value = "guided")]
    method: Method,
}

#[derive(Args)]
struct SelfplayArgs {
    /// Sample corruptions from the initial polluter without updating it.
    #[arg(long)]
    freeze_polluter: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    Grpo,
    Guided,
    OodClone,
}

#[derive(Clone, Copy, ValueEnum)]
enum Analysis {
    Scarcity,
    Snr,
    Gain,
    Drift,
}

fn flag_name(key: &str) -> String {
    key.replace('_', "-")
}

fn command() -> Command {
    let mut cmd = Cli::command();
    for key in KNOWN_KEYS.iter().filter(|k| !matches!(**k, "mode" | "freeze_polluter")) {
        cmd = cmd.arg(
            Arg::new(*key)
                .long(flag_name(key))
                .value_name("VALUE")
                .global(true)
                .action(ArgAction::Set)
                .allow_hyphen_values(true)
                .help_heading("Config keys"),
        );
    }
    cmd
}

fn resolve_config(cli: &Cli, matches: &ArgMatches, mode: Mode, freeze: bool) -> Result<ExperimentConfig> {
    let base = match &cli.config {
        Some(path) => load_config(path)?,
        None => ExperimentConfig::default(),
    };
    let mut overrides: Vec<String> = KNOWN_KEYS
        .iter()
        .filter_map(|key| {
            let sub = matches.subcommand().map(|(_, m)| m);
            let value = sub
                .and_then(|m| m.try_get_one::<String>(key).ok().flatten())
                .or_else(|| matches.try_get_one::<String>(key).ok().flatten())?;
            Some(format!("{key}={value}"))
        })
        .collect();
    overrides.extend(cli.overrides.iter().cloned());
    overrides.push(format!("mode={}", mode.name()));
    if freeze {
        overrides.push("freeze_polluter=true".into());
    }
    base.with_overrides(&overrides)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

fn check_histories<'a>(histories: impl IntoIterator<Item = &'a TrainingHistory>) -> Result<()> {
    histories.into_iter().try_for_each(TrainingHistory::validate)
}

fn run(cli: &Cli, matches: &ArgMatches) -> Result<()> {
    let out = cli.out.as_path();
    match &cli.command {
        Cmd::TrainRail => {
            let config = resolve_config(cli, matches, Mode::Rail, false)?;
            let world = config.world()?;
            let rails = offrail::harness::protocol::for_each_seed(&config.seeds, |seed| {
                train_rail(&world, &config, seed)
            })?;
            let histories: Vec<_> = rails.iter().map(|r| r.history.clone()).collect();
            check_histories(&histories)?;
            write_run(out, &config, &histories)?;
            for (seed, r) in config.seeds.iter().zip(&rails) {
                r.policy.save(out.join(format!("policy_seed{seed}.txt")))?;
            }
            println!("{}", serde_json::to_string_pretty(&Summary::from_histories(Mode::Rail, &histories))?);
        }
        Cmd::TrainRecovery(args) => {
            let mode = match args.method {
                Method::Grpo => Mode::RecoveryGrpo,
                Method::Guided => Mode::RecoveryGuided,
                Method::OodClone => Mode::RecoveryOodClone,
            };
            let config = resolve_config(cli, matches, mode, false)?;
            let runs = run_two_stage(&config)?;
            let histories: Vec<_> = runs.iter().map(|r| r.history.clone()).collect();
            check_histories(&histories)?;
            write_run(out, &config, &histories)?;
            println!("{}", serde_json::to_string_pretty(&Summary::from_histories(mode, &histories))?);
        }
        Cmd::Selfplay(args) => {
            let config = resolve_config(cli, matches, Mode::Selfplay, args.freeze_polluter)?;
            let runs = run_selfplay(&config)?;
            check_histories(runs.iter().map(|r| &r.history))?;
            write_selfplay_run(out, &config, &runs)?;
            let summary = SelfplaySummary::from_runs(config.freeze_polluter, &runs);
            println!("{}", serde_json::to_string_pretty(&summary)?);
        }
        Cmd::Analyze { what } => {
            let config = resolve_config(cli, matches, Mode::Analyze, false)?;
            write_provenance(out, &config)?;
            let seed = config.seeds[0];
            let (name, json) = match what {
                Analysis::Scarcity => {
                    let rows = run_scarcity(&[0.001, 0.01, 0.1], &[8, 64], 1_000_000, seed)?;
                    ("scarcity", serde_json::to_string_pretty(&rows)?)
                }
                Analysis::Snr => {
                    let settings = SnrSettings::default();
                    let runs = offrail::harness::protocol::for_each_seed(&config.seeds, |s| {
                        run_snr(&config, s, &settings)
                    })?;
                    ("snr", serde_json::to_string_pretty(&runs)?)
                }
                Analysis::Gain => ("gain", serde_json::to_string_pretty(&run_gain(&config, &GainSettings::default())?)?),
                Analysis::Drift => ("drift", serde_json::to_string_pretty(&run_drift(&config)?)?),
            };
            std::fs::write(out.join(format!("{name}.json")), &json)?;
            println!("{json}");
        }
        Cmd::Gradcheck {
            checks,
            tolerance,
            seed,
        } => {
            let report = run_gradcheck(*checks, *seed, *tolerance)?;
            std::fs::create_dir_all(out)?;
            write_json(&out.join("gradcheck.json"), &report)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
            if !report.passed() {
                return Err(Error::InvalidState(format!(
                    "{} of {} gradient checks exceeded {}",
                    report.failures, report.checks, report.tolerance
                )));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let matches = command().get_matches();
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(cli) => cli,
        Err(e) => e.exit(),
    };
    match run(&cli, &matches) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

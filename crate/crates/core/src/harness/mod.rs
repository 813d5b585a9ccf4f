//! Configuration, experiment protocols and metrics output.

pub mod analyses;
pub mod config;
pub mod metrics;
pub mod protocol;

pub use analyses::{
    run_drift, run_gain, run_gradcheck, run_scarcity, run_snr, DriftComparison, GainSettings,
    GradcheckReport, ScarcityRow, SnrRun, SnrSettings,
};
pub use config::{load_config, parse_config, ExperimentConfig, Mode};
pub use metrics::{write_run, write_selfplay_run, CheckpointRecord, StepRecord, Summary, TrainingHistory};
pub use protocol::{run_recovery, run_selfplay, run_two_stage, train_rail, RailOutcome, SeedRun};

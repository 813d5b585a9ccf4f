//! Numerical checks of the scarcity, noise, gain and drift arguments.

pub mod drift;
pub mod gain;
pub mod scarcity;
pub mod snr;

pub use drift::{pca_drift, policy_drift, probe_keys, probe_matrix, DriftReport, RowShift};
pub use gain::{
    gain_experiment, make_ood_target, measure_gain, predict_first_order_gain, tight_context,
    GainExperiment, GainPrediction, GainRecord,
};
pub use scarcity::{monte_carlo_any_success, scarcity_table, success_probability, ScarcityReport};
pub use snr::{
    empirical_snr, estimate_class_stats, snr_curve, snr_squared, ClassSampler, ClassStats,
    EmpiricalSnr, SnrInputs, SnrPoint,
};

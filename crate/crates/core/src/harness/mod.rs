//! Experiment harness: configuration, dispatch, artifacts, cross-model
//! comparison and oscillation detection.

pub mod compare;
pub mod config;
pub mod oscillation;
pub mod run;

pub use compare::{compare, compare_channels, ChannelDistance, ComparisonReport, MetricRow};
pub use config::{
    parse_config, parse_config_with, parse_surrogate_config, ExperimentConfig, ModelKind, Overrides,
    SurrogateConfig,
};
pub use oscillation::{detect_oscillation, OscillationReport, DEFAULT_THRESHOLD};
pub use run::{run_equilibrium, run_experiment, series_json, Manifest, OutputFormat, RunArtifacts, VERSION};

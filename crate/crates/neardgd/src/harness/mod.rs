//! Experiment harness: config parsing, built-in presets, and orchestration.

pub mod config;
pub mod experiment;
pub mod presets;

pub use config::{load_config, parse_config, ExperimentConfig, MethodSpec, ObjectiveSpec};
pub use experiment::{
    bounds_report, compare_experiment, emit_plot_data, run_experiment, summary_text,
    sweep_experiment, ExperimentReport, MethodReport,
};
pub use presets::{preset, PRESET_NAMES};

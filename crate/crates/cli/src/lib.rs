//! Config-driven experiment runner for `hmc-lab`.

pub mod config;
pub mod experiment;

pub use config::{parse_config, serialize_config, ConfigErrors, ExperimentConfig, ExperimentKind};
pub use experiment::{run_experiment, ExitReport, RunError};

/// Overrides the default output directory when neither `--output-dir` nor
/// `output_dir` is given.
pub const OUTPUT_DIR_ENV: &str = "HMC_LAB_OUTPUT_DIR";

pub const DEFAULT_OUTPUT_DIR: &str = "hmc-lab-out";

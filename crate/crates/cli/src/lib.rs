//! Command-line front end around the end-to-end pipeline.

pub mod config;
pub mod error;
pub mod pipeline;
pub mod presets;

pub use config::ExperimentConfig;
pub use error::{CliError, Stage};
pub use pipeline::{run_pipeline, RunSummary};

pub const THREADS_ENV: &str = "KOOPCERT_THREADS";

/// Worker threads requested through `KOOPCERT_THREADS`; one when unset.
pub fn threads() -> usize {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&t| t > 0)
        .unwrap_or(1)
}

//! Config-driven experiment runner for the multivariate extremal index
//! toolkit: TOML configs in, one JSON report plus CSV tables out.

pub mod config;
pub mod error;
pub mod ingest;
pub mod json;
pub mod runner;

pub use config::ExperimentConfig;
pub use error::CliError;
pub use ingest::{ingest_csv, write_csv};
pub use runner::{reproduce_paper, run_config, run_experiment, Artifacts, Section};

/// Environment variable that overrides the config seed.
pub const SEED_ENV: &str = "MEI_SEED";

/// `--seed`, then `MEI_SEED`, then the config, then zero.
pub fn resolve_seed(flag: Option<u64>, env: Option<&str>, config: Option<u64>) -> Result<u64, CliError> {
    if let Some(s) = flag {
        return Ok(s);
    }
    if let Some(text) = env {
        return text
            .trim()
            .parse()
            .map_err(|_| CliError::Config(format!("{SEED_ENV}={text:?} is not an unsigned integer")));
    }
    Ok(config.unwrap_or(0))
}

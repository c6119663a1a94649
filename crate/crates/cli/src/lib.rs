//! Command-line front end for the Gaussian sum filter benchmarks: config
//! resolution, trajectory files, experiment execution and result files.

pub mod config;
pub mod error;
pub mod execute;
pub mod output;
pub mod trajectory;

pub use config::{parse_config, Command, RunConfig, Scenario, Separation};
pub use error::{CliError, Result};
pub use execute::{execute, Outcome};
pub use trajectory::{ingest_trajectory, parse_trajectory, write_trajectory};

//! Scenario configuration, shape generators and experiment commands for
//! the `pcrform` binary.

pub mod commands;
pub mod config;
pub mod shapes;

pub use commands::CliError;
pub use config::{ConfigError, ScenarioConfig};
pub use shapes::{generate_shape, ShapeError, ShapeSpec};

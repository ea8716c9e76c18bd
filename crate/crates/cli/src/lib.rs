//! Command-line operations for dataset generation, training, detection,
//! evaluation and inspection.

pub mod commands;
pub mod config;
pub mod plot;
pub mod train;

pub use commands::{run, Cli, Command};
pub use config::RunConfig;

//! Command-line front end for the simulator: strict JSON configuration,
//! deterministic seeded parallelism, CSV/JSON emission for every
//! figure-reproduction recipe.

pub mod commands;
pub mod config;
pub mod error;
pub mod output;
pub mod parallel;

pub use commands::CommandContext;
pub use config::RunConfig;
pub use error::{CliError, CliResult};
pub use output::TableFormat;

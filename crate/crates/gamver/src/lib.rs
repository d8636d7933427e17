//! File formats, parallel execution and the command-line front end for
//! `gamver-core`.

pub mod cli;
pub mod commands;
pub mod config;
pub mod error;
pub mod exec;
pub mod gamv;
pub mod imageio;
pub mod report;
pub mod store;

pub use error::{CliError, EXIT_DEGENERATE, EXIT_OK, EXIT_VALIDATION};
pub use exec::Rayon;

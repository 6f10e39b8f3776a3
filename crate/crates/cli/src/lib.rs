//! Command-line experiments over the cascade solvers.
//!
//! A TOML [`config::ExperimentConfig`] selects a model and its numerics; each
//! [`commands::Command`] writes CSV tables and a [`output::RunManifest`] into
//! the output directory. CSV bodies depend only on the config and the seed.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;
pub mod error;
pub mod output;
pub mod setup;

pub use commands::{run, Command, RunOptions, RunOutcome};
pub use config::ExperimentConfig;
pub use error::CliError;

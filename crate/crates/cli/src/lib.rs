//! Command-line front end for `hazard-ctmc-core`: file formats, run
//! manifests and the `hazard-ctmc` subcommands.
//!
//! Items are numbered from 1 in every file and message this crate produces.

pub mod args;
pub mod commands;
pub mod error;
pub mod formats;
pub mod manifest;
pub mod repro;

pub use commands::run;
pub use error::{CliError, CliResult};

//! File formats, run configuration and the subcommands behind the
//! `aadladmm` binary.

pub mod commands;
pub mod config;
pub mod error;
pub mod io;
pub mod manifest;
pub mod verify;

pub use error::{CliError, Result};

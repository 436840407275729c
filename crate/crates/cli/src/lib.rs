//! Batch pipeline around the `giwvol` filter: CSV ingestion, JSON
//! configuration, the `giwvol` subcommands and their flat-file outputs.

pub mod commands;
pub mod config;
pub mod data;
pub mod error;
pub mod output;

pub use commands::{run, Cli};
pub use error::{CliError, Result};

//! Command-line front end for the MBSTS engine: config handling, CSV
//! ingestion, target construction and command dispatch.

pub mod args;
pub mod commands;
pub mod config;
pub mod error;
pub mod panel;
pub mod prices;

pub use error::{CliError, Result};

//! Batch front end for heavyq: config parsing, the subcommands and CSV output.

pub mod commands;
pub mod config;
pub mod output;

//! Orchestration for the `advae` command-line tool: run configuration,
//! subcommand bodies and the multi-seed report.

pub mod commands;
pub mod config;
pub mod report;

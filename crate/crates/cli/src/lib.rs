//! File formats, configuration files, reports and the subcommands of the
//! `craftplan` binary.

pub mod commands;
pub mod config;
pub mod formats;
pub mod report;

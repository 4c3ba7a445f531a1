//! The artifact's human interface: config parsing, run orchestration, and
//! plot-ready CSV/binary emission. The binary is `chbc`; see the repository
//! README for subcommands and file formats.

pub mod commands;
pub mod config;
pub mod output;

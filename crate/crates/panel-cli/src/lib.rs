//! Command-line front end for the panel simulator: configuration parsing,
//! run directories, binary caches/checkpoints, CSV series and the
//! experiment subcommands. All numerics live in `panel-core`.

pub mod checks;
pub mod commands;
pub mod config;
pub mod fileio;
pub mod scenario;

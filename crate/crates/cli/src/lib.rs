//! Command implementations behind the `dssl` binary.

pub mod commands;
pub mod config;
pub mod manifest;

pub use commands::CliError;

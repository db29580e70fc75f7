//! Command-line driver for the `nlwave` solver: config parsing and command
//! execution. The binary in `main.rs` is a thin wrapper.

pub mod config;
pub mod execute;
pub mod expr;

pub use config::{parse_config, Command, ConfigError, RunConfig};
pub use execute::{execute, ExecError, ExitStatus, Options, Outcome};

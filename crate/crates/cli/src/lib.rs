//! Command-line front end for the distillation experiments: config parsing,
//! sweep orchestration, result aggregation and single-step commands.

pub mod commands;
pub mod compare;
pub mod config;
pub mod error;
pub mod export;
pub mod gradcheck;
pub mod record;
pub mod runner;
pub mod spec;

pub use error::{CliError, Result};

//! Command-line verbs and the HTTP service over a built bundle.

pub mod commands;
pub mod config;
pub mod error;
pub mod service;

pub use error::CliError;

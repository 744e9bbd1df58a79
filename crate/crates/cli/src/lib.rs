//! Command-line tools and the JSON HTTP service for the glucose forecaster.

pub mod api;
pub mod commands;
pub mod config;
pub mod error;
pub mod service;

pub use error::{CliError, Result};
pub use service::Snapshot;

//! Batch verbs and the HTTP API over the arc memory.

pub mod commands;
pub mod config;
pub mod error;
pub mod server;
pub mod services;

pub use config::AppConfig;
pub use error::CliError;
pub use services::Services;

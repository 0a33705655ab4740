//! Command-line front end and HTTP labeling service for NeSi networks.

pub mod commands;
pub mod config;
pub mod error;
pub mod service;

pub use error::CliError;

//! Command-line runner around `pinode-core`: configuration, file formats
//! and the `generate → train → evaluate` pipeline.

pub mod app;
pub mod commands;
pub mod config;
pub mod error;
pub mod io;

pub use config::RunConfig;
pub use error::{Failure, Kind, Outcome};

//! Batch front-end for the fracgp experiments: configuration, data I/O,
//! training runs and their reports.

pub mod bench;
pub mod config;
pub mod error;
pub mod io;
pub mod model;
pub mod recipes;
pub mod run;

pub use config::{Overrides, RunConfig};
pub use error::CliError;
pub use run::{build_model, run, RunReport};

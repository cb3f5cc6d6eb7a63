//! File formats, experiment protocols and the command line around
//! [`nrt_core`].

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod dataset_io;
pub mod error;
pub mod experiments;
pub mod metrics_io;
pub mod run;
pub mod sweep;
pub mod verify;

pub use error::{exit, CliError, CliResult};

//! Config files, on-disk artifacts and the command-line entry points.

pub mod commands;
pub mod config;
pub mod svg;

pub use commands::{gen_data, inspect, sweep, train, Axis, GenStatus, SweepRow};
pub use config::{ExperimentConfig, ModelTag, Profile, DATA_DIR_ENV};

use crate::error::Error;

/// Process exit code for an error.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) => 3,
        Error::MissingArtifact { .. } => 4,
        Error::Format { .. } | Error::Corrupt { .. } => 5,
        _ => 1,
    }
}

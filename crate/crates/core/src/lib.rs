//! Target counting from dual-window OFDM range-Doppler periodograms.
//!
//! The pipeline: [`scene`] draws point-target scenes and synthesizes the
//! normalized OFDM frame, [`periodogram`] turns it into windowed
//! range-Doppler maps, [`nn`] holds the count classifier, [`data`] builds
//! datasets, trains and evaluates, and [`harness`] wires everything to
//! config files and the `rdcount` command line.

pub mod data;
pub mod error;
pub mod exec;
pub mod harness;
pub(crate) mod io_util;
pub mod nn;
pub mod periodogram;
pub mod rng;
pub mod scene;
pub mod window;

pub use error::{Error, Result};

//! File formats and the command line of the `rrcal-core` calibration toolkit.

pub mod cli;
pub mod error;
pub mod io;

pub use error::{Error, Result};

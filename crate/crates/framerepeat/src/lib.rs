//! Storage formats, oracles, training driver and command-line front end for
//! the frame repetition scorer in `framerepeat-core`.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod driver;
pub mod error;
pub mod oracles;
pub mod records;
pub mod sample_io;
pub mod scan;

pub use error::{Error, LoadError, Result};

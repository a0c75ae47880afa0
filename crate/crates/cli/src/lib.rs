//! File formats, reports, experiment drivers and the command line around
//! `bodyshape-core`.

pub mod commands;
pub mod error;
pub mod experiment;
pub mod model_file;
pub mod obj;
pub mod profile;
pub mod report;
pub mod table;

pub use error::{CliError, ErrorKind, Result};

//! Dataset ingestion, experiment presets and file I/O around the `nlfactor`
//! solver.

pub mod config;
pub mod data;
pub mod error;
pub mod files;
pub mod metrics;
pub mod presets;
pub mod run;
pub mod trace_io;

pub use error::{Error, Result};

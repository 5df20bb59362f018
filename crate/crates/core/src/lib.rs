//! Dynamic origin-destination demand estimation from link counts and speeds.

pub mod assemble;
pub mod choice;
pub mod error;
pub mod ingest;
pub mod network;
pub mod oracle;
pub mod patterns;
pub mod pipeline;
pub mod solver;
pub mod sparse;
pub mod svg;
pub mod timeflow;

pub use error::{Error, Result};

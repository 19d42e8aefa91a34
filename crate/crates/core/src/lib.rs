pub mod anomaly;
pub mod config;
pub mod error;
pub mod explain;
pub mod features;
pub mod ingest;
pub mod pipeline;
pub mod risk;
pub mod seeds;
pub mod segment;
pub mod stats;
mod svg;
pub mod synth;
pub mod trees;

pub use error::{Error, Result};

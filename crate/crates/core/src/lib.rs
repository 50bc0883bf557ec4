//! Tracking-by-detection fruit counting.

pub mod assign;
pub mod config;
pub mod correct;
pub mod error;
pub mod eval;
pub mod flow;
pub mod ingest;
pub mod localize;
pub mod model;
pub mod pipeline;
pub mod report;
pub mod simulate;
pub mod stats;
pub mod track;

pub use error::{Error, Result};

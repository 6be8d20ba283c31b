//! Mining coclick pairs from search logs, labeling the similar-article title
//! tokens that explain each pair, and training and scoring explainers.

pub mod cli;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod explain;
pub mod log_ingest;
pub mod pipeline;
pub mod report;
pub mod selection;
pub mod synth;
pub mod tagger;
pub mod tokenize;
pub mod util;

pub use error::{Error, Result};

//! Manifest-driven runner for the vitalsig pipelines.

// `!(x > 0.0)` is used on purpose so that NaN fails the check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod error;
pub mod flow;
pub mod manifest;
pub mod pipeline;
pub mod report;

pub use config::PipelineConfig;
pub use error::{CliError, CliResult};
pub use manifest::Manifest;
pub use pipeline::{parse_verbs, run, RunOptions, Verb};
pub use report::Report;

//! Batch front end for `contrastkit`: CSV ingestion, the background
//! selection and contrastive-dimension workflow, and a JSON run report.

pub mod config;
pub mod error;
pub mod io;
pub mod pipeline;
pub mod report;
pub mod sweep;
pub mod synth_cmd;

pub use config::{Method, PipelineConfig};
pub use error::{CliError, Result};
pub use pipeline::{run_pipeline, RunOptions};
pub use report::RunReport;

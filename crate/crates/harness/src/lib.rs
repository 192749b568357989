//! Dataset ingestion, run configuration, pipeline orchestration and
//! reporting for reverse-hierarchy saliency.

pub mod config;
pub mod dataset;
pub mod pipeline;
pub mod record;

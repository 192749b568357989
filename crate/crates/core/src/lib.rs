//! Saliency as coarse-to-fine unpredictability, fused into eye-fixation
//! predictions by sampling attention down an image pyramid.
//!
//! The pipeline: [`image_core::build_pyramid`] splits an image into coarse
//! to fine layers; [`saliency_map::compute_layer_saliency`] scores every
//! patch of a layer by how badly it is reconstructed from its degraded
//! version ([`sparse_sr`]); [`fixation_sampler::sample_chains`] draws
//! attention chains from the coarsest map down to the finest; and
//! [`eval_metrics`] compares the resulting maps with recorded fixations.

pub mod error;
pub mod image_core;
pub mod patch_ops;
pub mod sparse_sr;
pub mod saliency_map;
pub mod fixation_sampler;
pub mod eval_metrics;

pub use error::{Error, Result};

//! Multi-task person understanding: a shared convolutional backbone feeding
//! re-identification, attribute, pose, and body-part-segmentation heads,
//! trained jointly over several datasets with interleaved identity-balanced
//! batches.
//!
//! Layering:
//! - [`config`] / [`error`]: shared configuration and error types.
//! - [`backbone`] / [`heads`]: the network, built on the `autograd` tape.
//! - [`model`]: backbone + heads assembled per topology.
//! - [`losses`] / [`metrics`]: task losses and their evaluation metrics.
//! - [`data`]: manifests, synthetic data, batch planning, augmentation.
//! - [`trainer`] / [`checkpoint`]: the optimization loop and disk format.

pub mod backbone;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod heads;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod trainer;

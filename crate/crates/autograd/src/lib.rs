//! Tape-based reverse-mode automatic differentiation over `ndarray`, sized
//! for small convolutional networks trained on CPU in double precision.
//!
//! Design points:
//! - every tensor is an [`Arr`] (dynamic-rank `f64` array); determinism and
//!   numerical headroom are favored over raw speed,
//! - a [`tape::Tape`] records one forward pass; [`tape::Tape::backward`]
//!   walks it once and yields per-node gradients, so callers can inspect the
//!   gradient of any intermediate (not just parameters),
//! - parameters live in a [`params::ParamStore`] keyed by dotted names;
//!   layers in [`nn`] register themselves under a scope prefix, which gives
//!   checkpointing and per-scope parameter accounting for free,
//! - forward passes never mutate the store: batch-norm running statistics
//!   come back as [`nn::BufferUpdate`]s that the training loop applies,
//!   keeping read-only snapshots safe to share across threads.

pub mod adam;
pub mod gradcheck;
pub mod init;
pub mod nn;
pub mod ops;
pub mod params;
pub mod tape;

/// The one tensor type: dynamic-rank, double precision.
pub type Arr = ndarray::ArrayD<f64>;

pub use params::{Entry, ParamStore};
pub use tape::{Gradients, NodeId, Tape};

//! Structured operations (convolution, normalization, pooling, resizing)
//! implemented as `impl Tape` blocks.

pub mod conv;
pub mod norm;
pub mod pool;
pub mod resize;

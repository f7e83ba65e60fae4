//! Text-independent writer identification.
//!
//! Patches of handwriting are mapped to grids of local features by a small
//! convolutional network, the local features of an n-tuple of patches from
//! one writer are pooled into a single global feature, and a linear head
//! scores the global feature against every enrolled writer. Training draws
//! fresh random tuples every iteration so that the network cannot latch on to
//! particular characters.

pub mod error;
pub mod exec;
pub mod nn;
pub mod rng;
pub mod tensor;

pub mod aggregation;
pub mod checkpoint;
pub mod data;
pub mod eval;
pub mod models;
pub mod preprocess;
pub mod report;
pub mod sampling;
pub mod sweep;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
pub use exec::Exec;
pub use tensor::Tensor;

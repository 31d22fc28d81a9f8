//! Adaptive frame selection for sequence classification.
//!
//! A recurrent agent reads one feature vector at a time, consults an
//! attention-addressed memory of cheap downsampled features, and decides which
//! time step to look at next. Training combines cross-entropy, a value
//! regression, and a REINFORCE term with the value as baseline; inference stops
//! early once the predicted utility has dropped below its running max often
//! enough.

pub mod agent;
mod codec;
pub mod data;
pub mod error;
pub mod harness;
pub mod inference;
pub mod learning;
pub mod memory;
pub mod numerics;

pub use codec::write_atomic;
pub use error::{Error, FormatError, Result};

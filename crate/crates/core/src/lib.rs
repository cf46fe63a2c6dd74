//! Activity sensing from massive-MIMO channel tensors.
//!
//! The pipeline runs in five stages:
//!
//! 1. [`channel`] synthesises `T x F x M` complex channel records for five activity
//!    classes, including RF-chain impairments, noise and frame loss.
//! 2. [`preprocess`] repairs lost snapshots by linear interpolation and cuts the
//!    record into non-overlapping time windows.
//! 3. [`features`] forms the six complex correlation tensors of each window, turns
//!    them into 30 real tensors (plus the raw amplitude tensor) and CP-decomposes
//!    every one of them with [`cp`]; the sorted CP weights are the features.
//! 4. [`classifier`] trains a small elu/softmax network with Adam on those features.
//! 5. [`experiment`] wires everything into reproducible, manifest-driven runs.
//!
//! [`tensor`] holds the dense third-order tensor and matrix primitives and
//! [`io`] the binary tensor file format.

pub mod channel;
pub mod classifier;
pub mod cp;
mod error;
pub mod experiment;
pub mod features;
pub mod io;
pub mod preprocess;
mod rng;
pub mod tensor;

pub use error::{Error, Result};
pub use rng::derive_seed;

//! Skeleton-based temporal action segmentation with decoupled
//! spatio-temporal modeling.
//!
//! The crate is organized bottom-up:
//!
//! - [`tensor`]: f64 tensors, a reverse-mode tape and Adam.
//! - [`graph`]: skeleton topology and normalized k-adjacency operators.
//! - [`spatial`]: one-shot multi-scale graph aggregation, sub-feature
//!   grouping and the channel-collapse transform.
//! - [`temporal`]: per-joint (per-row) temporal layers in TCN and
//!   linear-transformer form, plus the joint-shared baseline.
//! - [`interaction`]: channel-to-channel cross-attention between a spatial
//!   sub-feature and the running temporal features.
//! - [`model`]: the assembled network with class/boundary heads and the
//!   multi-stage refinement branches.
//! - [`loss`], [`eval`]: training objective and segmentation metrics.
//! - [`data`]: the sequence format, boundary targets, joint-speed
//!   statistics and the synthetic generator.
//! - [`train`], [`gradcheck`], [`cli`]: harnesses driving all of the above.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod data;
pub mod eval;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod interaction;
pub mod loss;
pub mod model;
pub mod params;
pub mod spatial;
pub mod temporal;
pub mod tensor;
pub mod train;

pub use error::{DestError, Result};

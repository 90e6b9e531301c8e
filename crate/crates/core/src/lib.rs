//! Drift detection against an automatically selected fraction of a reference
//! sample.
//!
//! The crate provides exact discrete optimal transport, the dummy-point
//! partial Wasserstein distance, the biased kernel MMD and its partial
//! (weighted, box-capped) variant, reference-only bootstrap calibration with a
//! shifted-gamma null fit, per-point attribution, and a synthetic experiment
//! harness.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod numerics;
pub mod mmd;
pub mod ot;
pub mod partial_mmd;
pub mod statistic;
pub mod calibration;
pub mod detector;
pub mod attribution;
pub mod harness;

pub use error::{Error, Result};
pub use numerics::{Matrix, RngSeed, SampleSet};

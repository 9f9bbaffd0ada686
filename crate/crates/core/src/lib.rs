//! Multi-task aerial depth completion and object detection.
//!
//! A shared residual encoder fuses an RGB image with a sparse depth map.
//! One decoder completes the depth map; a feature-pyramid two-stage
//! detector finds buildings and bridges. Around the network sit a
//! procedural scene generator, input degradations, Monte-Carlo dropout
//! uncertainty, a trainer and an evaluation harness.

// `!(x > y)` checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dataio;
pub mod degrade;
pub mod detgeom;
mod error;
pub mod harness;
pub mod losses;
pub mod model;
pub mod scenegen;
pub mod trainer;
pub mod uncertainty;

pub use error::{Error, Result};

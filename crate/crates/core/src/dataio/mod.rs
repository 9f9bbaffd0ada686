//! On-disk dataset and checkpoint formats.
//!
//! A dataset is a directory of sample directories, each holding
//! `rgb.png`, `depth.raw`, `sparse.raw`, `boxes.json` and `meta.json`.
//! Depth rasters use the `DPF1` codec in [`raster`]; the value `0.0` marks
//! a missing measurement.

pub mod checkpoint;
pub mod raster;
pub mod sample;
mod types;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, Manifest};
pub use sample::{list_samples, read_sample, write_sample};
pub use types::*;

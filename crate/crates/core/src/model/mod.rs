//! The shared encoder, the depth-completion decoder and the detection
//! pathway.
//!
//! A [`Session`] owns one autodiff tape and binds parameters from a
//! [`NetworkState`] lazily, so a pathway that never runs contributes no
//! nodes and receives no gradient.

mod config;
mod detection;
mod network;
mod state;

pub(crate) use config::hex;
pub use config::{norm_groups, DetectionConfig, ModelConfig};
pub use detection::DetectionOutput;
pub use network::{prepare_input, EncoderFeatures, Mode, ModelInput, Session};
pub use state::{is_detection_key, NetworkState, DETECTION_PREFIX};

use crate::dataio::{BoundingBox, DepthMap, RgbImage, SparseDepthMap};
use crate::error::Result;

/// Deterministic inference: completed depth plus detections (empty when
/// the detection pathway is off).
pub fn predict(
    rgb: &RgbImage,
    sparse: &SparseDepthMap,
    state: &NetworkState,
    cfg: &ModelConfig,
) -> Result<(DepthMap, Vec<BoundingBox>)> {
    let input = prepare_input(rgb, sparse, cfg)?;
    let mut session = Session::new(state, cfg, Mode::Infer);
    let feats = session.forward_encoder(&input)?;
    let depth = session.forward_depth(&feats);
    let depth = session.depth_map(depth)?;
    let dets = if cfg.multitask {
        session.forward_detection(&feats, None)?.detections
    } else {
        Vec::new()
    };
    Ok((depth, dets))
}

/// One depth pass with dropout active, seeded by `seed`.
pub fn predict_depth_stochastic(
    input: &ModelInput,
    state: &NetworkState,
    cfg: &ModelConfig,
    seed: u64,
) -> Result<DepthMap> {
    let mut session = Session::new(state, cfg, Mode::McDropout { seed });
    let feats = session.forward_encoder(input)?;
    let depth = session.forward_depth(&feats);
    session.depth_map(depth)
}

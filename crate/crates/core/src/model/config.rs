use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Architecture hyperparameters. Serialized next to every checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Nominal input width; the network accepts any size with both sides >= 32.
    pub width: usize,
    pub height: usize,
    pub depth_stem_channels: usize,
    pub rgb_stem_channels: usize,
    /// Output channels of the five downsampling stages.
    pub encoder_channels: Vec<usize>,
    /// Residual blocks per stage.
    pub encoder_blocks: Vec<usize>,
    pub bottleneck_channels: usize,
    /// Output channels of the five transposed-convolution stages.
    pub decoder_channels: Vec<usize>,
    pub fpn_channels: usize,
    /// One anchor size per pyramid level P2..P6, in input pixels.
    pub anchor_sizes: Vec<f64>,
    /// Height / width ratios shared by every level.
    pub anchor_ratios: Vec<f64>,
    /// Foreground classes, excluding background.
    pub num_classes: usize,
    /// Dropout rate after each decoder stage.
    pub dropout: f64,
    /// Detection pathway on/off.
    pub multitask: bool,
    /// Maximum group-norm group count; the actual count divides the channels.
    pub norm_groups: usize,
    /// Depth scale (meters) used when the sparse input has no valid pixel.
    pub fallback_depth_scale: f64,
    pub detection: DetectionConfig,
}

/// Proposal, sampling and post-processing settings of the detector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionConfig {
    pub rpn_pre_nms_top_n: usize,
    pub rpn_post_nms_top_n: usize,
    pub rpn_nms_threshold: f64,
    pub rpn_positive_iou: f64,
    pub rpn_negative_iou: f64,
    pub rpn_batch_size: usize,
    pub rpn_positive_fraction: f64,
    pub roi_foreground_iou: f64,
    pub roi_batch_size: usize,
    pub roi_positive_fraction: f64,
    pub roi_output_size: usize,
    pub roi_sampling_ratio: usize,
    pub roi_fc_dim: usize,
    pub score_threshold: f64,
    pub nms_threshold: f64,
    pub max_detections: usize,
}

impl Default for DetectionConfig {
    fn default() -> Self {
        Self {
            rpn_pre_nms_top_n: 1000,
            rpn_post_nms_top_n: 1000,
            rpn_nms_threshold: 0.7,
            rpn_positive_iou: 0.7,
            rpn_negative_iou: 0.3,
            rpn_batch_size: 256,
            rpn_positive_fraction: 0.5,
            roi_foreground_iou: 0.5,
            roi_batch_size: 128,
            roi_positive_fraction: 0.25,
            roi_output_size: 7,
            roi_sampling_ratio: 2,
            roi_fc_dim: 1024,
            score_threshold: 0.05,
            nms_threshold: 0.5,
            max_detections: 100,
        }
    }
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            width: 320,
            height: 240,
            depth_stem_channels: 16,
            rgb_stem_channels: 48,
            encoder_channels: vec![64, 64, 128, 256, 512],
            encoder_blocks: vec![1, 3, 4, 6, 3],
            bottleneck_channels: 512,
            decoder_channels: vec![256, 128, 64, 64, 64],
            fpn_channels: 64,
            anchor_sizes: vec![16.0, 32.0, 64.0, 128.0, 256.0],
            anchor_ratios: vec![0.5, 1.0, 2.0],
            num_classes: 2,
            dropout: 0.2,
            multitask: true,
            norm_groups: 8,
            fallback_depth_scale: 50.0,
            detection: DetectionConfig::default(),
        }
    }
}

impl ModelConfig {
    /// Same topology at a quarter of the channel width, for CPU-scale training.
    pub fn compact() -> Self {
        Self {
            depth_stem_channels: 4,
            rgb_stem_channels: 12,
            encoder_channels: vec![16, 16, 32, 64, 128],
            bottleneck_channels: 128,
            decoder_channels: vec![64, 32, 16, 16, 16],
            fpn_channels: 32,
            detection: DetectionConfig {
                roi_fc_dim: 256,
                ..DetectionConfig::default()
            },
            ..Self::default()
        }
    }

    /// Very small network for fast tests.
    pub fn tiny(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            depth_stem_channels: 2,
            rgb_stem_channels: 2,
            encoder_channels: vec![4, 4, 8, 8, 8],
            encoder_blocks: vec![1, 1, 1, 1, 1],
            bottleneck_channels: 8,
            decoder_channels: vec![8, 8, 4, 4, 4],
            fpn_channels: 4,
            norm_groups: 2,
            detection: DetectionConfig {
                roi_fc_dim: 16,
                rpn_pre_nms_top_n: 200,
                rpn_post_nms_top_n: 100,
                roi_batch_size: 32,
                ..DetectionConfig::default()
            },
            ..Self::default()
        }
    }

    pub fn stem_channels(&self) -> usize {
        self.depth_stem_channels + self.rgb_stem_channels
    }

    pub fn num_anchors(&self) -> usize {
        self.anchor_ratios.len()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Invalid(m));
        if self.encoder_channels.len() != 5 || self.encoder_blocks.len() != 5 {
            return bad("encoder needs exactly 5 stages".into());
        }
        if self.decoder_channels.len() != 5 {
            return bad("decoder needs exactly 5 stages".into());
        }
        if self.anchor_sizes.len() != 5 {
            return bad("one anchor size per pyramid level (5) required".into());
        }
        if self.anchor_ratios.is_empty() || self.anchor_ratios.iter().any(|r| !(*r > 0.0)) {
            return bad(format!("anchor ratios {:?}", self.anchor_ratios));
        }
        let widths = [
            self.depth_stem_channels,
            self.rgb_stem_channels,
            self.bottleneck_channels,
            self.fpn_channels,
            self.detection.roi_fc_dim,
            self.num_classes,
            self.norm_groups,
        ];
        if widths.contains(&0)
            || self.encoder_channels.contains(&0)
            || self.encoder_blocks.contains(&0)
            || self.decoder_channels.contains(&0)
        {
            return bad("channel, block and class counts must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if self.width < 32 || self.height < 32 {
            return bad(format!("input {}x{} smaller than 32", self.width, self.height));
        }
        if !(self.fallback_depth_scale > 0.0) {
            return bad("fallback depth scale must be positive".into());
        }
        let d = &self.detection;
        if d.roi_output_size == 0 || d.rpn_batch_size == 0 || d.roi_batch_size == 0 {
            return bad("detector sizes must be positive".into());
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON encoding, hex.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex(&Sha256::digest(&json))
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Group count for a channel width: the largest divisor of `channels` not above `max`.
pub fn norm_groups(channels: usize, max: usize) -> usize {
    (1..=max.min(channels)).rev().find(|g| channels.is_multiple_of(*g)).unwrap_or(1)
}

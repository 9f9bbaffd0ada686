//! Monte-Carlo dropout: repeated stochastic depth passes reduced to a
//! per-pixel Gaussian (mean and maximum-likelihood variance).

use serde::Serialize;

use crate::dataio::{BoundingBox, DepthMap};
use crate::error::{Error, Result};
use crate::model::{predict_depth_stochastic, ModelConfig, ModelInput, NetworkState};

pub const DEFAULT_PASSES: usize = 20;

#[derive(Clone, Debug, PartialEq)]
pub struct UncertaintyMap {
    pub width: usize,
    pub height: usize,
    /// Meters.
    pub mean: Vec<f32>,
    /// Square meters, never negative.
    pub variance: Vec<f32>,
    pub n_passes: usize,
}

impl UncertaintyMap {
    pub fn mean_map(&self) -> Result<DepthMap> {
        DepthMap::new(self.width, self.height, self.mean.clone())
    }
}

/// Fits a per-pixel Gaussian to equally sized passes.
pub fn fit_gaussian(passes: &[DepthMap]) -> Result<UncertaintyMap> {
    let first = passes
        .first()
        .ok_or_else(|| Error::Invalid("at least one pass is required".into()))?;
    if let Some(p) = passes.iter().find(|p| !p.same_size(first)) {
        return Err(Error::Shape(format!(
            "pass {}x{} vs {}x{}",
            p.width(),
            p.height(),
            first.width(),
            first.height()
        )));
    }
    let n = passes.len() as f64;
    let len = first.values().len();
    let mut mean = vec![0.0f64; len];
    for p in passes {
        for (m, &v) in mean.iter_mut().zip(p.values()) {
            *m += v as f64;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0f64; len];
    for p in passes {
        for ((s, &v), &m) in var.iter_mut().zip(p.values()).zip(&mean) {
            let d = v as f64 - m;
            *s += d * d;
        }
    }
    Ok(UncertaintyMap {
        width: first.width(),
        height: first.height(),
        mean: mean.iter().map(|&m| m as f32).collect(),
        variance: var.iter().map(|&s| (s / n) as f32).collect(),
        n_passes: passes.len(),
    })
}

/// Runs `n_passes` dropout-active depth passes; pass `i` uses seed `seed + i`.
pub fn mc_dropout_predict(
    input: &ModelInput,
    state: &NetworkState,
    cfg: &ModelConfig,
    n_passes: usize,
    seed: u64,
) -> Result<UncertaintyMap> {
    if n_passes < 1 {
        return Err(Error::Invalid("n_passes must be at least 1".into()));
    }
    let passes = (0..n_passes as u64)
        .map(|i| predict_depth_stochastic(input, state, cfg, seed.wrapping_add(i)))
        .collect::<Result<Vec<_>>>()?;
    fit_gaussian(&passes)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct UncertaintySummary {
    pub inside_mean: f64,
    pub outside_mean: f64,
    /// `inside_mean / outside_mean`; `None` when the outside mean is zero.
    pub ratio: Option<f64>,
}

/// Mean variance over pixels whose centers fall inside any box, and over the rest.
pub fn summarize_uncertainty(umap: &UncertaintyMap, boxes: &[BoundingBox]) -> Result<UncertaintySummary> {
    let (w, h) = (umap.width, umap.height);
    for b in boxes {
        b.validate_within(w, h)?;
    }
    let (mut inside, mut n_in, mut outside, mut n_out) = (0.0f64, 0usize, 0.0f64, 0usize);
    for y in 0..h {
        let cy = y as f64 + 0.5;
        for x in 0..w {
            let cx = x as f64 + 0.5;
            let v = umap.variance[y * w + x] as f64;
            if boxes
                .iter()
                .any(|b| cx >= b.x_min && cx < b.x_max && cy >= b.y_min && cy < b.y_max)
            {
                inside += v;
                n_in += 1;
            } else {
                outside += v;
                n_out += 1;
            }
        }
    }
    if n_in == 0 {
        return Err(Error::EmptyRegion("no pixel lies inside the boxes".into()));
    }
    if n_out == 0 {
        return Err(Error::EmptyRegion("boxes cover the whole image".into()));
    }
    let (inside_mean, outside_mean) = (inside / n_in as f64, outside / n_out as f64);
    Ok(UncertaintySummary {
        inside_mean,
        outside_mean,
        ratio: (outside_mean > 0.0).then(|| inside_mean / outside_mean),
    })
}

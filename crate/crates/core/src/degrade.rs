//! Input degradations: uniform sparsification, distance-dependent Gaussian
//! noise, and rectangular missing-value masks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataio::{BoundingBox, DepthMap, SparseDepthMap};
use crate::error::{Error, Result};

pub const DEFAULT_DENSITY: f64 = 0.007;

/// Noised depths never fall below this, keeping them valid.
pub const MIN_NOISY_DEPTH: f32 = 0.001;

/// Integer pixel rectangle `[x, x + w) x [y, y + h)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PixelRect {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

impl PixelRect {
    pub fn contains(&self, px: usize, py: usize) -> bool {
        px >= self.x && px < self.x + self.w && py >= self.y && py < self.y + self.h
    }

    pub fn area(&self) -> usize {
        self.w * self.h
    }

    pub fn fits(&self, width: usize, height: usize) -> bool {
        self.w > 0 && self.h > 0 && self.x + self.w <= width && self.y + self.h <= height
    }
}

/// How missing-value boxes are chosen.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum MaskSpec {
    None,
    /// Explicit rectangles.
    Rects {
        rects: Vec<PixelRect>,
    },
    /// `count` rectangles with side lengths in `[min_size, max_size]`, placed
    /// uniformly at random.
    Random {
        count: usize,
        min_size: usize,
        max_size: usize,
    },
    /// Covers `count` randomly chosen ground-truth boxes (falls back to
    /// uniform placement when a sample has none).
    OverStructures {
        count: usize,
    },
}

/// One degradation recipe, recorded in sample provenance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorruptionSpec {
    pub density: f64,
    pub noise_level: f64,
    pub masks: MaskSpec,
    pub seed: u64,
}

impl Default for CorruptionSpec {
    fn default() -> Self {
        Self {
            density: DEFAULT_DENSITY,
            noise_level: 0.0,
            masks: MaskSpec::None,
            seed: 0,
        }
    }
}

impl CorruptionSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.density > 0.0 && self.density <= 1.0) {
            return Err(Error::Invalid(format!("density {} outside (0, 1]", self.density)));
        }
        if !(self.noise_level >= 0.0 && self.noise_level.is_finite()) {
            return Err(Error::Invalid(format!("noise level {} must be >= 0", self.noise_level)));
        }
        if let MaskSpec::Random { min_size, max_size, .. } = self.masks {
            if min_size == 0 || min_size > max_size {
                return Err(Error::Invalid(format!("mask size range [{min_size}, {max_size}]")));
            }
        }
        Ok(())
    }
}

/// Number of pixels a `density` sparsification keeps.
pub fn sample_count(density: f64, width: usize, height: usize) -> usize {
    (density * (width * height) as f64).round() as usize
}

/// Keeps exactly `round(density * H * W)` pixels chosen uniformly without
/// replacement; kept values equal the dense values.
pub fn sparsify(dense: &DepthMap, density: f64, seed: u64) -> Result<SparseDepthMap> {
    if !(density > 0.0 && density <= 1.0) {
        return Err(Error::Invalid(format!("density {density} outside (0, 1]")));
    }
    let n = dense.values().len();
    if dense.valid_count() != n {
        return Err(Error::Invalid("sparsify needs a fully valid dense map".into()));
    }
    let k = sample_count(density, dense.width(), dense.height());
    if k == 0 {
        return Err(Error::Invalid(format!(
            "density {density} keeps no pixels of a {}x{} map",
            dense.width(),
            dense.height()
        )));
    }
    // partial Fisher-Yates: the first k slots end up a uniform k-subset
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..n).collect();
    for i in 0..k.min(n - 1) {
        let j = rng.random_range(i..n);
        order.swap(i, j);
    }
    let mut values = vec![0.0f32; n];
    for &idx in &order[..k] {
        values[idx] = dense.values()[idx];
    }
    SparseDepthMap::new(DepthMap::new(dense.width(), dense.height(), values)?, density)
}

/// Replaces each valid depth `d` by `max(d + eps, 0.001)` with
/// `eps ~ Normal(0, (level * d)^2)`.
///
/// One standard-normal draw is taken per valid pixel in row-major order, so
/// different levels with the same seed scale identical draws.
pub fn add_distance_noise(sparse: &SparseDepthMap, level: f64, seed: u64) -> Result<SparseDepthMap> {
    if !(level >= 0.0 && level.is_finite()) {
        return Err(Error::Invalid(format!("noise level {level} must be >= 0")));
    }
    if level == 0.0 {
        return Ok(sparse.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values = sparse
        .map
        .values()
        .iter()
        .map(|&d| {
            if d > 0.0 {
                let z: f64 = rng.sample(StandardNormal);
                ((d as f64 + level * d as f64 * z) as f32).max(MIN_NOISY_DEPTH)
            } else {
                d
            }
        })
        .collect();
    SparseDepthMap::new(DepthMap::new(sparse.width(), sparse.height(), values)?, sparse.density)
}

/// Invalidates every pixel inside any rectangle.
pub fn mask_boxes(sparse: &SparseDepthMap, rects: &[PixelRect]) -> Result<SparseDepthMap> {
    let (w, h) = (sparse.width(), sparse.height());
    for r in rects {
        if !r.fits(w, h) {
            return Err(Error::Invalid(format!("mask rect {r:?} outside {w}x{h} map")));
        }
    }
    let mut out = sparse.clone();
    for r in rects {
        for y in r.y..r.y + r.h {
            for x in r.x..r.x + r.w {
                out.map.invalidate(y * w + x);
            }
        }
    }
    Ok(out)
}

/// `count` rectangles with sides in `[min_size, max_size]` (clipped to the image).
pub fn random_rects(
    width: usize,
    height: usize,
    count: usize,
    min_size: usize,
    max_size: usize,
    seed: u64,
) -> Vec<PixelRect> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let w = rng.random_range(min_size..=max_size).min(width);
            let h = rng.random_range(min_size..=max_size).min(height);
            PixelRect {
                x: rng.random_range(0..=width - w),
                y: rng.random_range(0..=height - h),
                w,
                h,
            }
        })
        .collect()
}

/// Smallest pixel rectangle covering a (pixel-edge) bounding box, clipped.
pub fn rect_covering(b: &BoundingBox, width: usize, height: usize) -> PixelRect {
    let x0 = (b.x_min.floor().max(0.0) as usize).min(width - 1);
    let y0 = (b.y_min.floor().max(0.0) as usize).min(height - 1);
    let x1 = (b.x_max.ceil() as usize).clamp(x0 + 1, width);
    let y1 = (b.y_max.ceil() as usize).clamp(y0 + 1, height);
    PixelRect {
        x: x0,
        y: y0,
        w: x1 - x0,
        h: y1 - y0,
    }
}

/// Resolves a [`MaskSpec`] into concrete rectangles for one image.
pub fn resolve_masks(spec: &MaskSpec, width: usize, height: usize, boxes: &[BoundingBox], seed: u64) -> Vec<PixelRect> {
    match spec {
        MaskSpec::None => Vec::new(),
        MaskSpec::Rects { rects } => rects.clone(),
        MaskSpec::Random {
            count,
            min_size,
            max_size,
        } => random_rects(width, height, *count, *min_size, *max_size, seed),
        MaskSpec::OverStructures { count } => {
            if boxes.is_empty() {
                let side = (width.min(height) / 6).max(1);
                return random_rects(width, height, *count, side, side * 2, seed);
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut order: Vec<usize> = (0..boxes.len()).collect();
            for i in 0..order.len().saturating_sub(1) {
                let j = rng.random_range(i..order.len());
                order.swap(i, j);
            }
            order
                .iter()
                .take(*count)
                .map(|&i| rect_covering(&boxes[i], width, height))
                .collect()
        }
    }
}

/// Seeds derived from one spec seed for each stage, so stages do not share streams.
fn stage_seed(seed: u64, stage: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(stage)
}

/// Runs the full protocol on a dense map: sparsify, add noise, then mask.
/// Returns the degraded map and the mask rectangles used.
pub fn degrade_dense(
    dense: &DepthMap,
    boxes: &[BoundingBox],
    spec: &CorruptionSpec,
) -> Result<(SparseDepthMap, Vec<PixelRect>)> {
    spec.validate()?;
    let sparse = sparsify(dense, spec.density, stage_seed(spec.seed, 1))?;
    degrade_sparse(
        &sparse,
        boxes,
        &CorruptionSpec {
            density: sparse.density,
            ..spec.clone()
        },
    )
}

/// Applies noise then masks to an existing sparse map (density is left as is).
pub fn degrade_sparse(
    sparse: &SparseDepthMap,
    boxes: &[BoundingBox],
    spec: &CorruptionSpec,
) -> Result<(SparseDepthMap, Vec<PixelRect>)> {
    spec.validate()?;
    let noisy = add_distance_noise(sparse, spec.noise_level, stage_seed(spec.seed, 2))?;
    let rects = resolve_masks(
        &spec.masks,
        sparse.width(),
        sparse.height(),
        boxes,
        stage_seed(spec.seed, 3),
    );
    Ok((mask_boxes(&noisy, &rects)?, rects))
}

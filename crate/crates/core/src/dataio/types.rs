use serde::{Deserialize, Serialize};

use crate::degrade::CorruptionSpec;
use crate::error::{Error, Result};

/// Dense single-channel depth raster in meters.
///
/// A pixel is valid iff its value is strictly positive; invalid pixels hold
/// exactly `0.0`. The validity mask is derived, never stored.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthMap {
    width: usize,
    height: usize,
    values: Vec<f32>,
}

impl DepthMap {
    /// Checks that every value is finite and non-negative.
    pub fn new(width: usize, height: usize, values: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Shape(format!("empty depth map {width}x{height}")));
        }
        if values.len() != width * height {
            return Err(Error::Shape(format!(
                "depth map {width}x{height} needs {} values, got {}",
                width * height,
                values.len()
            )));
        }
        if let Some(bad) = values.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::Invalid(format!(
                "depth value {bad} is not a finite non-negative number"
            )));
        }
        Ok(Self { width, height, values })
    }

    pub fn filled(width: usize, height: usize, value: f32) -> Result<Self> {
        Self::new(width, height, vec![value; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f32> {
        self.values
    }

    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.values[y * self.width + x]
    }

    pub fn is_valid(&self, idx: usize) -> bool {
        self.values[idx] > 0.0
    }

    pub fn valid_mask(&self) -> Vec<bool> {
        self.values.iter().map(|&v| v > 0.0).collect()
    }

    pub fn valid_count(&self) -> usize {
        self.values.iter().filter(|&&v| v > 0.0).count()
    }

    pub fn same_size(&self, other: &DepthMap) -> bool {
        self.width == other.width && self.height == other.height
    }

    /// Sets pixel `idx` invalid.
    pub fn invalidate(&mut self, idx: usize) {
        self.values[idx] = 0.0;
    }
}

/// Depth raster where only a fraction of pixels carry measurements.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseDepthMap {
    pub map: DepthMap,
    /// Nominal sampling density in `(0, 1]`.
    pub density: f64,
}

impl SparseDepthMap {
    pub fn new(map: DepthMap, density: f64) -> Result<Self> {
        if !(density > 0.0 && density <= 1.0) {
            return Err(Error::Invalid(format!("sparse density {density} outside (0, 1]")));
        }
        Ok(Self { map, density })
    }

    pub fn width(&self) -> usize {
        self.map.width()
    }

    pub fn height(&self) -> usize {
        self.map.height()
    }

    pub fn valid_count(&self) -> usize {
        self.map.valid_count()
    }
}

/// 8-bit interleaved RGB image.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RgbImage {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 || data.len() != width * height * 3 {
            return Err(Error::Shape(format!(
                "rgb image {width}x{height} with {} bytes",
                data.len()
            )));
        }
        Ok(Self { width, height, data })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = 3 * (y * self.width + x);
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }
}

/// Axis-aligned box in pixel-edge coordinates: a box covering pixel columns
/// `a..=b` has `x_min = a`, `x_max = b + 1`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
    pub class_id: u32,
    /// 1.0 for ground truth.
    pub score: f64,
}

impl BoundingBox {
    pub fn ground_truth(x_min: f64, y_min: f64, x_max: f64, y_max: f64, class_id: u32) -> Self {
        Self {
            x_min,
            y_min,
            x_max,
            y_max,
            class_id,
            score: 1.0,
        }
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> f64 {
        self.width().max(0.0) * self.height().max(0.0)
    }

    /// Checks ordering, class and score constraints.
    pub fn validate(&self) -> Result<()> {
        let finite = [self.x_min, self.y_min, self.x_max, self.y_max, self.score]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::Invalid(format!("non-finite box {self:?}")));
        }
        if !(self.x_min < self.x_max && self.y_min < self.y_max) {
            return Err(Error::Invalid(format!("degenerate box {self:?}")));
        }
        if self.class_id < 1 {
            return Err(Error::Invalid(format!(
                "box class_id must be >= 1, got {}",
                self.class_id
            )));
        }
        if !(0.0..=1.0).contains(&self.score) {
            return Err(Error::Invalid(format!("box score {} outside [0, 1]", self.score)));
        }
        Ok(())
    }

    /// Validates and checks containment in a `width x height` image.
    pub fn validate_within(&self, width: usize, height: usize) -> Result<()> {
        self.validate()?;
        if self.x_min < 0.0 || self.y_min < 0.0 || self.x_max > width as f64 || self.y_max > height as f64 {
            return Err(Error::Invalid(format!("box {self:?} outside {width}x{height} image")));
        }
        Ok(())
    }
}

/// Pinhole intrinsics in pixels.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Intrinsics {
    /// Square pixels and a centred principal point for a horizontal field of view.
    pub fn from_hfov(width: usize, height: usize, hfov_deg: f64) -> Self {
        let fx = (width as f64 / 2.0) / (hfov_deg.to_radians() / 2.0).tan();
        Self {
            fx,
            fy: fx,
            cx: width as f64 / 2.0,
            cy: height as f64 / 2.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0 && self.cx.is_finite() && self.cy.is_finite()) {
            return Err(Error::Invalid(format!("bad intrinsics {self:?}")));
        }
        Ok(())
    }
}

/// Where a sample came from and what was done to it.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    /// Generator identity and its parameters, free-form.
    #[serde(default)]
    pub generator: Option<serde_json::Value>,
    /// Degradations applied to `sparse.raw`, in order.
    #[serde(default)]
    pub corruption: Vec<CorruptionSpec>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneMeta {
    pub intrinsics: Intrinsics,
    pub seed: u64,
    #[serde(default)]
    pub provenance: Provenance,
}

/// One training/evaluation record.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub rgb: RgbImage,
    pub dense_depth: DepthMap,
    pub sparse_depth: SparseDepthMap,
    pub boxes: Vec<BoundingBox>,
    pub meta: SceneMeta,
}

impl Sample {
    pub fn width(&self) -> usize {
        self.rgb.width()
    }

    pub fn height(&self) -> usize {
        self.rgb.height()
    }

    /// Checks shared dimensions, box containment and intrinsics.
    pub fn validate(&self) -> Result<()> {
        let (w, h) = (self.rgb.width(), self.rgb.height());
        for (name, map) in [("dense", &self.dense_depth), ("sparse", &self.sparse_depth.map)] {
            if map.width() != w || map.height() != h {
                return Err(Error::Shape(format!(
                    "{name} depth {}x{} vs rgb {w}x{h}",
                    map.width(),
                    map.height()
                )));
            }
        }
        for b in &self.boxes {
            b.validate_within(w, h)?;
        }
        self.meta.intrinsics.validate()
    }
}

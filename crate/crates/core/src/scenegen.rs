//! Procedural aerial scenes: a textured ground plane, axis-aligned box
//! structures (buildings and bridge-like slabs) and hemispherical
//! distractors, ray cast through a pinhole camera.
//!
//! World frame: `x` east, `y` north, `z` up, ground at `z = 0`. The camera
//! sits at `(0, 0, altitude)`; pitch tilts the optical axis away from nadir
//! towards the heading given by yaw.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataio::{BoundingBox, DepthMap, Intrinsics, Provenance, RgbImage, Sample, SceneMeta};
use crate::degrade::sparsify;
use crate::error::{Error, Result};

pub const CLASS_BUILDING: u32 = 1;
pub const CLASS_BRIDGE: u32 = 2;

/// Sun elevation above the horizon, degrees.
const SUN_ELEVATION_DEG: f64 = 45.0;
const SUN_AZIMUTH_DEG: f64 = 135.0;
const AMBIENT: f64 = 0.35;

type Vec3 = [f64; 3];

fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn add_scaled(a: Vec3, b: Vec3, s: f64) -> Vec3 {
    [a[0] + b[0] * s, a[1] + b[1] * s, a[2] + b[2] * s]
}

fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

/// Ground-plane rectangle in world meters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Footprint {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl Footprint {
    /// Positive-area overlap after growing both rectangles by `gap / 2`.
    pub fn overlaps(&self, other: &Footprint, gap: f64) -> bool {
        let h = gap / 2.0;
        self.x_min - h < other.x_max + h
            && other.x_min - h < self.x_max + h
            && self.y_min - h < other.y_max + h
            && other.y_min - h < self.y_max + h
    }

    pub fn contains(&self, x: f64, y: f64, margin: f64) -> bool {
        x > self.x_min - margin && x < self.x_max + margin && y > self.y_min - margin && y < self.y_max + margin
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Structure {
    pub footprint: Footprint,
    pub height: f64,
    pub albedo: Vec3,
    pub class_id: u32,
}

/// Tree-like hemisphere resting on the ground. Gets depth, never a box.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Distractor {
    pub center: [f64; 2],
    pub radius: f64,
    pub albedo: Vec3,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraPose {
    pub altitude: f64,
    /// Tilt of the optical axis away from straight down, degrees.
    pub pitch_deg: f64,
    /// Heading of the image "up" direction, degrees counter-clockwise from +y.
    pub yaw_deg: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub width: usize,
    pub height: usize,
    pub camera: CameraPose,
    pub intrinsics: Intrinsics,
    pub structures: Vec<Structure>,
    pub ground_albedo: Vec3,
    pub distractors: Vec<Distractor>,
    pub seed: u64,
}

/// Sampling ranges for [`sample_scene`]. Ranges are inclusive `(lo, hi)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneParams {
    pub width: usize,
    pub height: usize,
    pub hfov_deg: f64,
    pub altitude: (f64, f64),
    pub pitch_deg: (f64, f64),
    pub structures: (usize, usize),
    /// Probability that a structure is a bridge-like slab.
    pub bridge_fraction: f64,
    pub building_side: (f64, f64),
    pub building_height: (f64, f64),
    pub bridge_length: (f64, f64),
    pub bridge_width: (f64, f64),
    pub bridge_height: (f64, f64),
    pub distractors: (usize, usize),
    pub distractor_radius: (f64, f64),
    /// Minimum clearance between structure footprints, meters.
    pub min_gap: f64,
    pub max_attempts: usize,
}

impl Default for SceneParams {
    fn default() -> Self {
        Self {
            width: 320,
            height: 240,
            hfov_deg: 60.0,
            altitude: (40.0, 80.0),
            pitch_deg: (0.0, 20.0),
            structures: (1, 4),
            bridge_fraction: 0.3,
            building_side: (8.0, 18.0),
            building_height: (5.0, 30.0),
            bridge_length: (22.0, 40.0),
            bridge_width: (5.0, 8.0),
            bridge_height: (5.0, 12.0),
            distractors: (0, 6),
            distractor_radius: (1.5, 4.0),
            min_gap: 6.0,
            max_attempts: 400,
        }
    }
}

impl SceneParams {
    /// Straight-down camera, useful for geometric checks.
    pub fn nadir() -> Self {
        Self {
            pitch_deg: (0.0, 0.0),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ordered = |name: &str, (lo, hi): (f64, f64)| {
            if lo.is_finite() && hi.is_finite() && lo <= hi {
                Ok(())
            } else {
                Err(Error::Invalid(format!("degenerate range {name} = ({lo}, {hi})")))
            }
        };
        ordered("altitude", self.altitude)?;
        ordered("pitch_deg", self.pitch_deg)?;
        ordered("building_side", self.building_side)?;
        ordered("building_height", self.building_height)?;
        ordered("bridge_length", self.bridge_length)?;
        ordered("bridge_width", self.bridge_width)?;
        ordered("bridge_height", self.bridge_height)?;
        ordered("distractor_radius", self.distractor_radius)?;
        if self.width < 2 || self.height < 2 {
            return Err(Error::Invalid(format!(
                "image {}x{} too small",
                self.width, self.height
            )));
        }
        if self.structures.0 > self.structures.1 || self.distractors.0 > self.distractors.1 {
            return Err(Error::Invalid("count range lo > hi".into()));
        }
        if !(self.hfov_deg > 0.0 && self.hfov_deg < 170.0) {
            return Err(Error::Invalid(format!("hfov {}", self.hfov_deg)));
        }
        let tallest = self.building_height.1.max(self.bridge_height.1);
        if self.altitude.0 <= tallest {
            return Err(Error::Invalid(format!(
                "minimum altitude {} must exceed tallest structure {tallest}",
                self.altitude.0
            )));
        }
        if self.building_side.0 <= 0.0 || self.bridge_width.0 <= 0.0 || self.distractor_radius.0 <= 0.0 {
            return Err(Error::Invalid("sizes must be positive".into()));
        }
        Ok(())
    }
}

/// Orthonormal camera frame in world coordinates.
#[derive(Clone, Copy, Debug)]
struct Frame {
    center: Vec3,
    forward: Vec3,
    right: Vec3,
    down: Vec3,
}

impl Frame {
    fn new(pose: &CameraPose) -> Self {
        let (sy, cy) = pose.yaw_deg.to_radians().sin_cos();
        let (sp, cp) = pose.pitch_deg.to_radians().sin_cos();
        // heading on the ground that is "up" in the image at zero pitch
        let heading = [-sy, cy, 0.0];
        let right = [cy, sy, 0.0];
        let forward = [sp * heading[0], sp * heading[1], -cp];
        let up = [cp * heading[0], cp * heading[1], sp];
        Self {
            center: [0.0, 0.0, pose.altitude],
            forward,
            right,
            down: [-up[0], -up[1], -up[2]],
        }
    }

    /// Ray through the pixel-centre at continuous image coords `(u, v)`.
    /// The ray parameter equals z-depth because `forward` has unit length and
    /// the offsets are orthogonal to it.
    fn ray(&self, k: &Intrinsics, u: f64, v: f64) -> Vec3 {
        let a = (u - k.cx) / k.fx;
        let b = (v - k.cy) / k.fy;
        add_scaled(add_scaled(self.forward, self.right, a), self.down, b)
    }

    /// Pinhole projection `(u, v, z)` of a world point.
    fn project(&self, k: &Intrinsics, p: Vec3) -> (f64, f64, f64) {
        let d = sub(p, self.center);
        let z = dot(d, self.forward);
        (
            k.fx * dot(d, self.right) / z + k.cx,
            k.fy * dot(d, self.down) / z + k.cy,
            z,
        )
    }
}

fn uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..=hi)
    }
}

fn uniform_count(rng: &mut ChaCha8Rng, (lo, hi): (usize, usize)) -> usize {
    rng.random_range(lo..=hi)
}

fn point_in_convex(poly: &[[f64; 2]], p: [f64; 2]) -> bool {
    let mut sign = 0.0f64;
    for i in 0..poly.len() {
        let a = poly[i];
        let b = poly[(i + 1) % poly.len()];
        let cross = (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]);
        if cross != 0.0 {
            if sign != 0.0 && cross.signum() != sign {
                return false;
            }
            sign = cross.signum();
        }
    }
    true
}

/// Ground intersections of the four image-corner rays.
fn ground_quad(frame: &Frame, k: &Intrinsics, w: usize, h: usize) -> Result<Vec<[f64; 2]>> {
    [(0.0, 0.0), (w as f64, 0.0), (w as f64, h as f64), (0.0, h as f64)]
        .iter()
        .map(|&(u, v)| {
            let d = frame.ray(k, u, v);
            if d[2] >= -1e-6 {
                return Err(Error::Invalid("camera sees above the horizon".into()));
            }
            let t = -frame.center[2] / d[2];
            Ok([frame.center[0] + t * d[0], frame.center[1] + t * d[1]])
        })
        .collect()
}

fn random_albedo(rng: &mut ChaCha8Rng, base: Vec3, spread: f64) -> Vec3 {
    let mut out = base;
    for c in &mut out {
        *c = (*c + rng.random_range(-spread..=spread)).clamp(0.05, 0.95);
    }
    out
}

/// Draws a scene deterministically from `seed`.
pub fn sample_scene(seed: u64, params: &SceneParams) -> Result<SceneSpec> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let intrinsics = Intrinsics::from_hfov(params.width, params.height, params.hfov_deg);
    let camera = CameraPose {
        altitude: uniform(&mut rng, params.altitude),
        pitch_deg: uniform(&mut rng, params.pitch_deg),
        yaw_deg: rng.random_range(0.0..360.0),
    };
    let frame = Frame::new(&camera);
    let quad = ground_quad(&frame, &intrinsics, params.width, params.height)?;
    let (qx0, qx1) = quad
        .iter()
        .fold((f64::MAX, f64::MIN), |(a, b), p| (a.min(p[0]), b.max(p[0])));
    let (qy0, qy1) = quad
        .iter()
        .fold((f64::MAX, f64::MIN), |(a, b), p| (a.min(p[1]), b.max(p[1])));

    let n_structures = uniform_count(&mut rng, params.structures);
    let mut structures: Vec<Structure> = Vec::with_capacity(n_structures);
    for _ in 0..n_structures {
        let is_bridge = rng.random_bool(params.bridge_fraction.clamp(0.0, 1.0));
        let (sx, sy, height, class_id, base) = if is_bridge {
            let len = uniform(&mut rng, params.bridge_length);
            let wid = uniform(&mut rng, params.bridge_width);
            let along_x = rng.random_bool(0.5);
            let (sx, sy) = if along_x { (len, wid) } else { (wid, len) };
            (
                sx,
                sy,
                uniform(&mut rng, params.bridge_height),
                CLASS_BRIDGE,
                [0.55, 0.52, 0.48],
            )
        } else {
            let sx = uniform(&mut rng, params.building_side);
            let sy = uniform(&mut rng, params.building_side);
            (
                sx,
                sy,
                uniform(&mut rng, params.building_height),
                CLASS_BUILDING,
                [0.7, 0.45, 0.4],
            )
        };
        let albedo = random_albedo(&mut rng, base, 0.15);
        let mut placed = None;
        for _ in 0..params.max_attempts {
            let cx = rng.random_range(qx0..=qx1);
            let cy = rng.random_range(qy0..=qy1);
            if !point_in_convex(&quad, [cx, cy]) {
                continue;
            }
            let fp = Footprint {
                x_min: cx - sx / 2.0,
                y_min: cy - sy / 2.0,
                x_max: cx + sx / 2.0,
                y_max: cy + sy / 2.0,
            };
            if structures.iter().all(|s| !s.footprint.overlaps(&fp, params.min_gap)) {
                placed = Some(fp);
                break;
            }
        }
        // structures beyond the minimum count are dropped when the view is full
        let Some(footprint) = placed else {
            if structures.len() >= params.structures.0 {
                break;
            }
            return Err(Error::Generation(format!(
                "seed {seed}: no room for structure {} after {} attempts",
                structures.len() + 1,
                params.max_attempts
            )));
        };
        structures.push(Structure {
            footprint,
            height,
            albedo,
            class_id,
        });
    }

    let n_distractors = uniform_count(&mut rng, params.distractors);
    let mut distractors = Vec::with_capacity(n_distractors);
    for _ in 0..n_distractors {
        let radius = uniform(&mut rng, params.distractor_radius);
        let albedo = random_albedo(&mut rng, [0.2, 0.45, 0.18], 0.08);
        for _ in 0..params.max_attempts {
            let cx = rng.random_range(qx0..=qx1);
            let cy = rng.random_range(qy0..=qy1);
            if point_in_convex(&quad, [cx, cy])
                && structures.iter().all(|s| !s.footprint.contains(cx, cy, radius + 1.0))
            {
                distractors.push(Distractor {
                    center: [cx, cy],
                    radius,
                    albedo,
                });
                break;
            }
        }
    }

    let ground_albedo = random_albedo(&mut rng, [0.45, 0.5, 0.35], 0.1);
    let spec = SceneSpec {
        width: params.width,
        height: params.height,
        camera,
        intrinsics,
        structures,
        ground_albedo,
        distractors,
        seed,
    };
    spec.validate()?;
    Ok(spec)
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        self.intrinsics.validate()?;
        if self.width == 0 || self.height == 0 {
            return Err(Error::Invalid("empty image".into()));
        }
        let tallest = self.structures.iter().map(|s| s.height).fold(0.0, f64::max);
        if self.camera.altitude <= tallest {
            return Err(Error::Invalid(format!(
                "altitude {} not above tallest structure {tallest}",
                self.camera.altitude
            )));
        }
        for (i, a) in self.structures.iter().enumerate() {
            if !(a.height > 0.0) || a.class_id == 0 {
                return Err(Error::Invalid(format!("structure {i} invalid: {a:?}")));
            }
            for b in &self.structures[i + 1..] {
                if a.footprint.overlaps(&b.footprint, 0.0) {
                    return Err(Error::Invalid(format!("structure {i} overlaps another")));
                }
            }
        }
        ground_quad(&Frame::new(&self.camera), &self.intrinsics, self.width, self.height)?;
        Ok(())
    }

    /// Pixel projections of the eight corners of structure `idx`.
    pub fn project_corners(&self, idx: usize) -> Vec<(f64, f64)> {
        let frame = Frame::new(&self.camera);
        let s = &self.structures[idx];
        let f = s.footprint;
        let mut out = Vec::with_capacity(8);
        for &x in &[f.x_min, f.x_max] {
            for &y in &[f.y_min, f.y_max] {
                for &z in &[0.0, s.height] {
                    let (u, v, _) = frame.project(&self.intrinsics, [x, y, z]);
                    out.push((u, v));
                }
            }
        }
        out
    }
}

/// What a ray hit first.
#[derive(Clone, Copy, Debug, PartialEq)]
enum Hit {
    Ground,
    Structure(usize),
    Distractor(usize),
}

/// Slab test against an axis-aligned box; returns entry distance and normal.
fn intersect_box(origin: Vec3, dir: Vec3, lo: Vec3, hi: Vec3) -> Option<(f64, Vec3)> {
    let mut t_near = f64::NEG_INFINITY;
    let mut t_far = f64::INFINITY;
    let mut normal = [0.0; 3];
    for axis in 0..3 {
        if dir[axis].abs() < 1e-12 {
            if origin[axis] < lo[axis] || origin[axis] > hi[axis] {
                return None;
            }
            continue;
        }
        let inv = 1.0 / dir[axis];
        let (mut t0, mut t1) = ((lo[axis] - origin[axis]) * inv, (hi[axis] - origin[axis]) * inv);
        let mut n = [0.0; 3];
        n[axis] = -dir[axis].signum();
        if t0 > t1 {
            std::mem::swap(&mut t0, &mut t1);
        }
        if t0 > t_near {
            t_near = t0;
            normal = n;
        }
        t_far = t_far.min(t1);
        if t_near > t_far {
            return None;
        }
    }
    (t_near > 0.0).then_some((t_near, normal))
}

/// Nearest hit on the upper half of a sphere centred on the ground.
fn intersect_dome(origin: Vec3, dir: Vec3, center: Vec3, radius: f64) -> Option<(f64, Vec3)> {
    let oc = sub(origin, center);
    let a = dot(dir, dir);
    let b = 2.0 * dot(oc, dir);
    let c = dot(oc, oc) - radius * radius;
    let disc = b * b - 4.0 * a * c;
    if disc < 0.0 {
        return None;
    }
    let t = (-b - disc.sqrt()) / (2.0 * a);
    if t <= 0.0 {
        return None;
    }
    let p = add_scaled(origin, dir, t);
    if p[2] < 0.0 {
        return None;
    }
    let n = sub(p, center);
    Some((t, [n[0] / radius, n[1] / radius, n[2] / radius]))
}

/// Deterministic +-8% brightness variation on a 2 m ground grid.
fn ground_texture(x: f64, y: f64) -> f64 {
    let (ix, iy) = ((x / 2.0).floor() as i64, (y / 2.0).floor() as i64);
    let mut h = (ix as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (iy as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    h ^= h >> 29;
    h = h.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    h ^= h >> 32;
    0.92 + 0.16 * ((h & 0xFFFF) as f64 / 65535.0)
}

/// Renderer output: everything a [`crate::dataio::Sample`] holds except the sparse map.
#[derive(Clone, Debug, PartialEq)]
pub struct Rendered {
    pub rgb: RgbImage,
    pub dense_depth: DepthMap,
    pub boxes: Vec<BoundingBox>,
    pub meta: SceneMeta,
}

/// Ray casts every pixel centre. Depth is z-depth in meters.
pub fn render(spec: &SceneSpec) -> Result<Rendered> {
    spec.validate()?;
    let (w, h) = (spec.width, spec.height);
    let frame = Frame::new(&spec.camera);
    let k = &spec.intrinsics;
    let (se, ce) = SUN_ELEVATION_DEG.to_radians().sin_cos();
    let (sa, ca) = SUN_AZIMUTH_DEG.to_radians().sin_cos();
    let sun = [ce * ca, ce * sa, se];

    let mut depth = vec![0.0f32; w * h];
    let mut rgb = vec![0u8; w * h * 3];
    let mut extents: Vec<Option<[usize; 4]>> = vec![None; spec.structures.len()];

    for py in 0..h {
        for px in 0..w {
            let dir = frame.ray(k, px as f64 + 0.5, py as f64 + 0.5);
            let t_ground = -frame.center[2] / dir[2];
            let mut best = (t_ground, Hit::Ground, [0.0, 0.0, 1.0]);
            for (i, s) in spec.structures.iter().enumerate() {
                let f = s.footprint;
                if let Some((t, n)) =
                    intersect_box(frame.center, dir, [f.x_min, f.y_min, 0.0], [f.x_max, f.y_max, s.height])
                {
                    if t < best.0 {
                        best = (t, Hit::Structure(i), n);
                    }
                }
            }
            for (i, d) in spec.distractors.iter().enumerate() {
                let c = [d.center[0], d.center[1], 0.0];
                if let Some((t, n)) = intersect_dome(frame.center, dir, c, d.radius) {
                    if t < best.0 {
                        best = (t, Hit::Distractor(i), n);
                    }
                }
            }
            let (t, hit, normal) = best;
            let idx = py * w + px;
            depth[idx] = t as f32;
            let p = add_scaled(frame.center, dir, t);
            let albedo = match hit {
                Hit::Ground => {
                    let tex = ground_texture(p[0], p[1]);
                    spec.ground_albedo.map(|c| c * tex)
                }
                Hit::Structure(i) => {
                    let e = extents[i].get_or_insert([px, py, px, py]);
                    e[0] = e[0].min(px);
                    e[1] = e[1].min(py);
                    e[2] = e[2].max(px);
                    e[3] = e[3].max(py);
                    spec.structures[i].albedo
                }
                Hit::Distractor(i) => spec.distractors[i].albedo,
            };
            let shade = AMBIENT + (1.0 - AMBIENT) * dot(normal, sun).max(0.0);
            for c in 0..3 {
                rgb[3 * idx + c] = (albedo[c] * shade * 255.0).round().clamp(0.0, 255.0) as u8;
            }
        }
    }

    let boxes = extents
        .iter()
        .zip(&spec.structures)
        .filter_map(|(e, s)| {
            e.map(|[x0, y0, x1, y1]| {
                BoundingBox::ground_truth(x0 as f64, y0 as f64, (x1 + 1) as f64, (y1 + 1) as f64, s.class_id)
            })
        })
        .collect();

    let meta = SceneMeta {
        intrinsics: *k,
        seed: spec.seed,
        provenance: Provenance {
            generator: Some(serde_json::json!({
                "generator": "scenegen",
                "scene": spec,
            })),
            corruption: Vec::new(),
        },
    };
    Ok(Rendered {
        rgb: RgbImage::new(w, h, rgb)?,
        dense_depth: DepthMap::new(w, h, depth)?,
        boxes,
        meta,
    })
}

/// Samples, renders and sparsifies one scene. The sparse map uses `seed` too.
pub fn generate_sample(seed: u64, params: &SceneParams, density: f64) -> Result<Sample> {
    let r = render(&sample_scene(seed, params)?)?;
    let sparse_depth = sparsify(&r.dense_depth, density, seed)?;
    Ok(Sample {
        rgb: r.rgb,
        dense_depth: r.dense_depth,
        sparse_depth,
        boxes: r.boxes,
        meta: r.meta,
    })
}

//! Evaluation: depth metrics, the single- vs multi-task robustness grid,
//! the uncertainty comparison, and the CSV/JSON/PNG report writers.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::dataio::checkpoint::{read_manifest, PARAMS_FILE};
use crate::dataio::raster::encode_raster;
use crate::dataio::sample::encode_rgb_png;
use crate::dataio::{
    list_samples, load_checkpoint, read_sample, BoundingBox, DepthMap, RgbImage, Sample, SparseDepthMap,
};
use crate::degrade::{degrade_sparse, CorruptionSpec, MaskSpec, PixelRect};
use crate::detgeom::mean_average_precision;
use crate::error::{Error, Result};
use crate::model::{hex, predict, prepare_input, ModelConfig, NetworkState};
use crate::trainer::mix;
use crate::uncertainty::{mc_dropout_predict, summarize_uncertainty, UncertaintyMap};

pub const REPORT_CSV: &str = "report.csv";
pub const REPORT_JSON: &str = "report.json";
pub const RMSE_PLOT: &str = "rmse_vs_noise.png";
pub const UNCERTAINTY_CSV: &str = "uncertainty.csv";

const MAP_IOU: f64 = 0.5;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct DepthMetrics {
    pub rmse: f64,
    pub mae: f64,
    pub rel: f64,
    pub delta1: f64,
    pub delta2: f64,
    pub delta3: f64,
    /// Pixels evaluated.
    pub count: usize,
}

/// Metrics over pixels with valid ground truth, restricted to `region` when given.
pub fn depth_metrics(pred: &DepthMap, gt: &DepthMap, region: Option<&[bool]>) -> Result<DepthMetrics> {
    if !pred.same_size(gt) {
        return Err(Error::Shape(format!(
            "prediction {}x{} vs ground truth {}x{}",
            pred.width(),
            pred.height(),
            gt.width(),
            gt.height()
        )));
    }
    if let Some(r) = region {
        if r.len() != gt.values().len() {
            return Err(Error::Shape(format!(
                "region of {} pixels for {}",
                r.len(),
                gt.values().len()
            )));
        }
    }
    let (mut sq, mut abs, mut rel) = (0.0f64, 0.0f64, 0.0f64);
    let mut within = [0usize; 3];
    let mut n = 0usize;
    for (i, (&p, &g)) in pred.values().iter().zip(gt.values()).enumerate() {
        if g <= 0.0 || region.is_some_and(|r| !r[i]) {
            continue;
        }
        let (p, g) = (p as f64, g as f64);
        let err = p - g;
        sq += err * err;
        abs += err.abs();
        rel += err.abs() / g;
        let ratio = (p / g).max(g / p);
        for (k, slot) in within.iter_mut().enumerate() {
            if ratio < 1.25f64.powi(k as i32 + 1) {
                *slot += 1;
            }
        }
        n += 1;
    }
    if n == 0 {
        return Err(Error::EmptyRegion("no valid ground-truth pixel in the region".into()));
    }
    let nf = n as f64;
    Ok(DepthMetrics {
        rmse: (sq / nf).sqrt(),
        mae: abs / nf,
        rel: rel / nf,
        delta1: within[0] as f64 / nf,
        delta2: within[1] as f64 / nf,
        delta3: within[2] as f64 / nf,
        count: n,
    })
}

/// Unweighted mean of per-sample metrics.
pub fn mean_metrics(all: &[DepthMetrics]) -> DepthMetrics {
    if all.is_empty() {
        return DepthMetrics::default();
    }
    let n = all.len() as f64;
    let avg = |f: fn(&DepthMetrics) -> f64| all.iter().map(f).sum::<f64>() / n;
    DepthMetrics {
        rmse: avg(|m| m.rmse),
        mae: avg(|m| m.mae),
        rel: avg(|m| m.rel),
        delta1: avg(|m| m.delta1),
        delta2: avg(|m| m.delta2),
        delta3: avg(|m| m.delta3),
        count: all.iter().map(|m| m.count).sum(),
    }
}

/// Pixel mask of the union of `rects`.
pub fn rect_mask(rects: &[PixelRect], width: usize, height: usize) -> Vec<bool> {
    let mut mask = vec![false; width * height];
    for r in rects {
        for y in r.y..(r.y + r.h).min(height) {
            for x in r.x..(r.x + r.w).min(width) {
                mask[y * width + x] = true;
            }
        }
    }
    mask
}

/// Identifies the weights a report was produced with.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckpointInfo {
    pub path: String,
    /// SHA-256 of `params.bin`, hex.
    pub params_sha256: String,
    pub config_hash: String,
    pub epoch: usize,
}

/// A checkpoint loaded for evaluation.
#[derive(Clone, Debug)]
pub struct EvalModel {
    pub state: NetworkState,
    pub config: ModelConfig,
    pub info: CheckpointInfo,
}

impl EvalModel {
    pub fn load(dir: &Path) -> Result<Self> {
        let ckpt = load_checkpoint(dir)?;
        let manifest = read_manifest(dir)?;
        let params_path = dir.join(PARAMS_FILE);
        let bytes = fs::read(&params_path).map_err(|e| Error::io(&params_path, e))?;
        Ok(Self {
            state: ckpt.state,
            config: ckpt.config,
            info: CheckpointInfo {
                path: dir.display().to_string(),
                params_sha256: hex(&Sha256::digest(&bytes)),
                config_hash: manifest.config_hash,
                epoch: ckpt.epoch,
            },
        })
    }
}

/// Noise levels crossed with masks off/on.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CorruptionGrid {
    pub noise_levels: Vec<f64>,
    /// Masks used by the "on" cells.
    pub masks: MaskSpec,
    pub seed: u64,
}

impl Default for CorruptionGrid {
    fn default() -> Self {
        Self {
            noise_levels: vec![0.0, 0.1, 0.2, 0.4],
            masks: MaskSpec::OverStructures { count: 1 },
            seed: 0,
        }
    }
}

impl CorruptionGrid {
    /// `(noise_level, masks_on)` in report order.
    pub fn cells(&self) -> Vec<(f64, bool)> {
        self.noise_levels
            .iter()
            .flat_map(|&n| [(n, false), (n, true)])
            .collect()
    }

    /// The recipe for one sample in one cell. The seed depends only on the
    /// sample, so every cell sees the same noise draws.
    pub fn spec_for(&self, noise_level: f64, masks_on: bool, sample_index: usize, density: f64) -> CorruptionSpec {
        CorruptionSpec {
            density,
            noise_level,
            masks: if masks_on { self.masks.clone() } else { MaskSpec::None },
            seed: mix(self.seed, sample_index as u64),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SampleEval {
    pub sample: usize,
    pub metrics: DepthMetrics,
    /// RMSE inside the masked rectangles, if any pixel was masked.
    pub masked_rmse: Option<f64>,
    /// SHA-256 of the degraded sparse raster fed to the model.
    pub input_sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ModelCell {
    pub per_sample: Vec<SampleEval>,
    pub aggregate: DepthMetrics,
    pub masked_rmse: Option<f64>,
    /// `None` when the model has no detection pathway or no ground truth exists.
    pub map50: Option<f64>,
}

/// Multi-task minus single-task.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricDelta {
    pub rmse: f64,
    pub mae: f64,
    pub rel: f64,
    pub delta1: f64,
    pub delta2: f64,
    pub delta3: f64,
    pub masked_rmse: Option<f64>,
    pub map50: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CellReport {
    pub noise_level: f64,
    pub masks_on: bool,
    /// Recipe with the seed of sample 0; sample `i` uses `mix(grid seed, i)`.
    pub corruption: CorruptionSpec,
    pub single: ModelCell,
    pub multi: ModelCell,
    pub delta: MetricDelta,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ComparisonReport {
    pub single: CheckpointInfo,
    pub multi: CheckpointInfo,
    pub samples: usize,
    pub grid: CorruptionGrid,
    pub cells: Vec<CellReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub uncertainty: Option<UncertaintyReport>,
}

fn sparse_hash(sparse: &SparseDepthMap) -> String {
    let bytes = encode_raster(sparse.width(), sparse.height(), sparse.map.values());
    hex(&Sha256::digest(&bytes))
}

fn check_compatible(a: &ModelConfig, b: &ModelConfig, samples: &[Sample]) -> Result<()> {
    if (a.width, a.height) != (b.width, b.height) {
        return Err(Error::Shape(format!(
            "checkpoints expect {}x{} and {}x{}",
            a.width, a.height, b.width, b.height
        )));
    }
    if samples.is_empty() {
        return Err(Error::EmptyDataset(PathBuf::new()));
    }
    for (i, s) in samples.iter().enumerate() {
        if (s.width(), s.height()) != (a.width, a.height) {
            return Err(Error::Shape(format!(
                "sample {i} is {}x{}, checkpoints expect {}x{}",
                s.width(),
                s.height(),
                a.width,
                a.height
            )));
        }
    }
    Ok(())
}

struct Evaluated {
    eval: SampleEval,
    detections: Vec<BoundingBox>,
}

/// Degrades one sample for one model and evaluates it.
fn evaluate_one(model: &EvalModel, sample: &Sample, index: usize, spec: &CorruptionSpec) -> Result<Evaluated> {
    let (sparse, rects) = degrade_sparse(&sample.sparse_depth, &sample.boxes, spec)?;
    let (pred, detections) = predict(&sample.rgb, &sparse, &model.state, &model.config)?;
    let metrics = depth_metrics(&pred, &sample.dense_depth, None)?;
    let masked_rmse = if rects.is_empty() {
        None
    } else {
        let mask = rect_mask(&rects, sample.width(), sample.height());
        match depth_metrics(&pred, &sample.dense_depth, Some(&mask)) {
            Ok(m) => Some(m.rmse),
            Err(Error::EmptyRegion(_)) => None,
            Err(e) => return Err(e),
        }
    };
    Ok(Evaluated {
        eval: SampleEval {
            sample: index,
            metrics,
            masked_rmse,
            input_sha256: sparse_hash(&sparse),
        },
        detections,
    })
}

fn mean_of(values: impl Iterator<Item = f64>) -> Option<f64> {
    let v: Vec<f64> = values.collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

fn model_cell(model: &EvalModel, samples: &[Sample], results: Vec<Evaluated>) -> ModelCell {
    let map50 = if model.config.multitask {
        let images: Vec<_> = results
            .iter()
            .zip(samples)
            .map(|(r, s)| (r.detections.clone(), s.boxes.clone()))
            .collect();
        mean_average_precision(&images, model.config.num_classes as u32, MAP_IOU)
    } else {
        None
    };
    let per_sample: Vec<SampleEval> = results.into_iter().map(|r| r.eval).collect();
    let aggregate = mean_metrics(&per_sample.iter().map(|e| e.metrics).collect::<Vec<_>>());
    ModelCell {
        masked_rmse: mean_of(per_sample.iter().filter_map(|e| e.masked_rmse)),
        per_sample,
        aggregate,
        map50,
    }
}

fn delta(single: &ModelCell, multi: &ModelCell) -> MetricDelta {
    let (a, b) = (&single.aggregate, &multi.aggregate);
    let opt = |x: Option<f64>, y: Option<f64>| x.zip(y).map(|(x, y)| y - x);
    MetricDelta {
        rmse: b.rmse - a.rmse,
        mae: b.mae - a.mae,
        rel: b.rel - a.rel,
        delta1: b.delta1 - a.delta1,
        delta2: b.delta2 - a.delta2,
        delta3: b.delta3 - a.delta3,
        masked_rmse: opt(single.masked_rmse, multi.masked_rmse),
        map50: opt(single.map50, multi.map50),
    }
}

/// Evaluates both models over every grid cell. Each model degrades its own
/// copy of the inputs; the two copies must hash equal.
pub fn compare_models(
    single: &EvalModel,
    multi: &EvalModel,
    samples: &[Sample],
    grid: &CorruptionGrid,
) -> Result<ComparisonReport> {
    check_compatible(&single.config, &multi.config, samples)?;
    let mut cells = Vec::new();
    for (noise_level, masks_on) in grid.cells() {
        let mut results = (Vec::new(), Vec::new());
        for (i, s) in samples.iter().enumerate() {
            let spec = grid.spec_for(noise_level, masks_on, i, s.sparse_depth.density);
            let a = evaluate_one(single, s, i, &spec)?;
            let b = evaluate_one(multi, s, i, &spec)?;
            if a.eval.input_sha256 != b.eval.input_sha256 {
                return Err(Error::Invalid(format!(
                    "degraded inputs differ for sample {i} at noise {noise_level}, masks {masks_on}"
                )));
            }
            results.0.push(a);
            results.1.push(b);
        }
        let single_cell = model_cell(single, samples, results.0);
        let multi_cell = model_cell(multi, samples, results.1);
        cells.push(CellReport {
            noise_level,
            masks_on,
            corruption: grid.spec_for(noise_level, masks_on, 0, samples[0].sparse_depth.density),
            delta: delta(&single_cell, &multi_cell),
            single: single_cell,
            multi: multi_cell,
        });
    }
    Ok(ComparisonReport {
        single: single.info.clone(),
        multi: multi.info.clone(),
        samples: samples.len(),
        grid: grid.clone(),
        cells,
        uncertainty: None,
    })
}

pub fn load_samples(data_dir: &Path) -> Result<Vec<Sample>> {
    let dirs = list_samples(data_dir)?;
    if dirs.is_empty() {
        return Err(Error::EmptyDataset(data_dir.to_path_buf()));
    }
    dirs.iter().map(|d| read_sample(d)).collect()
}

/// Loads both checkpoints and the test set, then runs [`compare_models`].
pub fn run_comparison(single: &Path, multi: &Path, data_dir: &Path, grid: &CorruptionGrid) -> Result<ComparisonReport> {
    let single = EvalModel::load(single)?;
    let multi = EvalModel::load(multi)?;
    compare_models(&single, &multi, &load_samples(data_dir)?, grid)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Region {
    InsideBoxes,
    OutsideBoxes,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct UncertaintyRow {
    pub model: String,
    pub region: Region,
    pub mean_variance: f64,
    /// Inside over outside; `None` (not applicable) when the outside mean is zero.
    pub ratio: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct UncertaintyReport {
    pub n_passes: usize,
    pub seed: u64,
    /// Samples with at least one ground-truth box.
    pub samples: usize,
    pub rows: Vec<UncertaintyRow>,
    #[serde(skip)]
    pub maps: Vec<(String, usize, UncertaintyMap)>,
}

/// MC-dropout variance inside vs outside ground-truth boxes for both models,
/// on clean inputs. Samples without boxes are skipped.
pub fn compare_uncertainty(
    single: &EvalModel,
    multi: &EvalModel,
    samples: &[Sample],
    n_passes: usize,
    seed: u64,
) -> Result<UncertaintyReport> {
    check_compatible(&single.config, &multi.config, samples)?;
    let mut rows = Vec::new();
    let mut maps = Vec::new();
    let mut used = 0;
    for (name, model) in [("single", single), ("multi", multi)] {
        let (mut inside, mut outside) = (Vec::new(), Vec::new());
        used = 0;
        for (i, s) in samples.iter().enumerate() {
            if s.boxes.is_empty() {
                continue;
            }
            let input = prepare_input(&s.rgb, &s.sparse_depth, &model.config)?;
            let umap = mc_dropout_predict(&input, &model.state, &model.config, n_passes, mix(seed, i as u64))?;
            let summary = summarize_uncertainty(&umap, &s.boxes)?;
            inside.push(summary.inside_mean);
            outside.push(summary.outside_mean);
            maps.push((name.to_string(), i, umap));
            used += 1;
        }
        if used == 0 {
            return Err(Error::EmptyRegion("no sample has ground-truth boxes".into()));
        }
        let inside = mean_of(inside.into_iter()).unwrap_or(0.0);
        let outside = mean_of(outside.into_iter()).unwrap_or(0.0);
        let ratio = (outside > 0.0).then(|| inside / outside);
        rows.push(UncertaintyRow {
            model: name.into(),
            region: Region::InsideBoxes,
            mean_variance: inside,
            ratio,
        });
        rows.push(UncertaintyRow {
            model: name.into(),
            region: Region::OutsideBoxes,
            mean_variance: outside,
            ratio,
        });
    }
    Ok(UncertaintyReport {
        n_passes,
        seed,
        samples: used,
        rows,
        maps,
    })
}

pub fn run_uncertainty_comparison(
    single: &Path,
    multi: &Path,
    data_dir: &Path,
    n_passes: usize,
    seed: u64,
) -> Result<UncertaintyReport> {
    let single = EvalModel::load(single)?;
    let multi = EvalModel::load(multi)?;
    compare_uncertainty(&single, &multi, &load_samples(data_dir)?, n_passes, seed)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// One row per cell and model, plus a `multi-single` delta row per cell.
pub fn report_csv(report: &ComparisonReport) -> String {
    let mut out = String::from("noise_level,masks,model,rmse,mae,rel,delta1,delta2,delta3,masked_rmse,map50\n");
    for c in &report.cells {
        let masks = if c.masks_on { "on" } else { "off" };
        for (name, cell) in [("single", &c.single), ("multi", &c.multi)] {
            let m = &cell.aggregate;
            out += &format!(
                "{},{masks},{name},{},{},{},{},{},{},{},{}\n",
                c.noise_level,
                m.rmse,
                m.mae,
                m.rel,
                m.delta1,
                m.delta2,
                m.delta3,
                fmt_opt(cell.masked_rmse),
                fmt_opt(cell.map50)
            );
        }
        let d = &c.delta;
        out += &format!(
            "{},{masks},multi-single,{},{},{},{},{},{},{},{}\n",
            c.noise_level,
            d.rmse,
            d.mae,
            d.rel,
            d.delta1,
            d.delta2,
            d.delta3,
            fmt_opt(d.masked_rmse),
            fmt_opt(d.map50)
        );
    }
    out
}

pub fn uncertainty_csv(report: &UncertaintyReport) -> String {
    let mut out = String::from("model,region,mean_variance,ratio\n");
    for r in &report.rows {
        let region = match r.region {
            Region::InsideBoxes => "inside",
            Region::OutsideBoxes => "outside",
        };
        let ratio = r.ratio.map(|x| x.to_string()).unwrap_or_else(|| "n/a".into());
        out += &format!("{},{region},{},{ratio}\n", r.model, r.mean_variance);
    }
    out
}

const VIRIDIS: [[f64; 3]; 5] = [
    [68.0, 1.0, 84.0],
    [59.0, 82.0, 139.0],
    [33.0, 145.0, 140.0],
    [94.0, 201.0, 98.0],
    [253.0, 231.0, 37.0],
];

/// Maps `t` in `[0, 1]` (clamped) onto a perceptually ordered palette.
pub fn colormap(t: f64) -> [u8; 3] {
    let t = if t.is_finite() { t.clamp(0.0, 1.0) } else { 0.0 };
    let pos = t * (VIRIDIS.len() - 1) as f64;
    let i = (pos.floor() as usize).min(VIRIDIS.len() - 2);
    let f = pos - i as f64;
    let mut px = [0u8; 3];
    for (c, out) in px.iter_mut().enumerate() {
        *out = (VIRIDIS[i][c] + f * (VIRIDIS[i + 1][c] - VIRIDIS[i][c])).round() as u8;
    }
    px
}

/// False-color rendering of a scalar field, normalized by its maximum.
pub fn false_color(values: &[f32], width: usize, height: usize) -> Result<RgbImage> {
    let max = values.iter().copied().fold(0.0f32, f32::max) as f64;
    let data = values
        .iter()
        .flat_map(|&v| colormap(if max > 0.0 { v as f64 / max } else { 0.0 }))
        .collect();
    RgbImage::new(width, height, data)
}

struct Canvas {
    w: usize,
    h: usize,
    px: Vec<u8>,
}

impl Canvas {
    fn new(w: usize, h: usize) -> Self {
        Self {
            w,
            h,
            px: vec![255; w * h * 3],
        }
    }

    fn set(&mut self, x: i64, y: i64, c: [u8; 3]) {
        if x >= 0 && y >= 0 && (x as usize) < self.w && (y as usize) < self.h {
            let i = (y as usize * self.w + x as usize) * 3;
            self.px[i..i + 3].copy_from_slice(&c);
        }
    }

    fn line(&mut self, (x0, y0): (f64, f64), (x1, y1): (f64, f64), c: [u8; 3]) {
        let steps = ((x1 - x0).abs().max((y1 - y0).abs()).ceil() as usize).max(1);
        for s in 0..=steps {
            let t = s as f64 / steps as f64;
            self.set(
                (x0 + t * (x1 - x0)).round() as i64,
                (y0 + t * (y1 - y0)).round() as i64,
                c,
            );
        }
    }

    fn dot(&mut self, (x, y): (f64, f64), c: [u8; 3]) {
        for dy in -2..=2 {
            for dx in -2..=2 {
                self.set(x.round() as i64 + dx, y.round() as i64 + dy, c);
            }
        }
    }
}

/// Line plot of aggregate RMSE against noise level: one series per model and
/// mask mode (single blue, multi orange; masked series in lighter shades).
pub fn rmse_plot(report: &ComparisonReport) -> Result<RgbImage> {
    let (w, h, margin) = (480usize, 320usize, 40.0);
    let mut canvas = Canvas::new(w, h);
    let max_noise = report.cells.iter().map(|c| c.noise_level).fold(0.0, f64::max).max(1e-9);
    let max_rmse = report
        .cells
        .iter()
        .flat_map(|c| [c.single.aggregate.rmse, c.multi.aggregate.rmse])
        .fold(0.0, f64::max)
        .max(1e-9)
        * 1.1;
    let to_px = |noise: f64, rmse: f64| {
        (
            margin + noise / max_noise * (w as f64 - 2.0 * margin),
            h as f64 - margin - rmse / max_rmse * (h as f64 - 2.0 * margin),
        )
    };
    let black = [0, 0, 0];
    canvas.line(to_px(0.0, 0.0), to_px(max_noise, 0.0), black);
    canvas.line(to_px(0.0, 0.0), to_px(0.0, max_rmse), black);
    for c in &report.cells {
        let (x, y) = to_px(c.noise_level, 0.0);
        canvas.line((x, y), (x, y + 5.0), black);
    }
    let series: [(bool, bool, [u8; 3]); 4] = [
        (false, false, [31, 119, 180]),
        (false, true, [158, 202, 225]),
        (true, false, [255, 127, 14]),
        (true, true, [253, 191, 111]),
    ];
    for (is_multi, masks_on, color) in series {
        let mut pts: Vec<(f64, f64)> = report
            .cells
            .iter()
            .filter(|c| c.masks_on == masks_on)
            .map(|c| {
                let m = if is_multi { &c.multi } else { &c.single };
                (c.noise_level, m.aggregate.rmse)
            })
            .collect();
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        for pair in pts.windows(2) {
            canvas.line(to_px(pair[0].0, pair[0].1), to_px(pair[1].0, pair[1].1), color);
        }
        for p in &pts {
            canvas.dot(to_px(p.0, p.1), color);
        }
    }
    RgbImage::new(w, h, canvas.px)
}

fn write_bytes(path: PathBuf, bytes: &[u8]) -> Result<()> {
    fs::write(&path, bytes).map_err(|e| Error::io(&path, e))
}

/// Writes the variance PNGs (`variance_<model>_<sample>.png`) and the summary table.
pub fn write_uncertainty_outputs(report: &UncertaintyReport, out_dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut written = Vec::new();
    for (model, sample, umap) in &report.maps {
        let path = out_dir.join(format!("variance_{model}_{sample:03}.png"));
        write_bytes(
            path.clone(),
            &encode_rgb_png(&false_color(&umap.variance, umap.width, umap.height)?)?,
        )?;
        written.push(path);
    }
    let path = out_dir.join(UNCERTAINTY_CSV);
    write_bytes(path.clone(), uncertainty_csv(report).as_bytes())?;
    written.push(path);
    Ok(written)
}

/// Writes `report.csv`, `report.json`, the RMSE plot and, when present, the
/// uncertainty outputs.
pub fn write_report(report: &ComparisonReport, out_dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut written = Vec::new();
    let csv = out_dir.join(REPORT_CSV);
    write_bytes(csv.clone(), report_csv(report).as_bytes())?;
    written.push(csv);
    let json = out_dir.join(REPORT_JSON);
    write_bytes(
        json.clone(),
        &serde_json::to_vec_pretty(report).expect("report serializes"),
    )?;
    written.push(json);
    let plot = out_dir.join(RMSE_PLOT);
    write_bytes(plot.clone(), &encode_rgb_png(&rmse_plot(report)?)?)?;
    written.push(plot);
    if let Some(u) = &report.uncertainty {
        written.extend(write_uncertainty_outputs(u, out_dir)?);
    }
    Ok(written)
}

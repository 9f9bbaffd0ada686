use std::fs;
use std::io::Cursor;
use std::path::{Path, PathBuf};

use crate::dataio::raster::{decode_depth, encode_raster};
use crate::dataio::{BoundingBox, RgbImage, Sample, SceneMeta, SparseDepthMap};
use crate::error::{Error, Result};

use serde::{Deserialize, Serialize};

pub const RGB_FILE: &str = "rgb.png";
pub const DEPTH_FILE: &str = "depth.raw";
pub const SPARSE_FILE: &str = "sparse.raw";
pub const BOXES_FILE: &str = "boxes.json";
pub const META_FILE: &str = "meta.json";

pub fn encode_rgb_png(img: &RgbImage) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, img.width() as u32, img.height() as u32);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc.write_header().map_err(|e| Error::format("png", e.to_string()))?;
        writer
            .write_image_data(img.data())
            .map_err(|e| Error::format("png", e.to_string()))?;
        writer.finish().map_err(|e| Error::format("png", e.to_string()))?;
    }
    Ok(out)
}

/// Decodes an 8-bit RGB or RGBA PNG (alpha is dropped).
pub fn decode_rgb_png(bytes: &[u8]) -> Result<RgbImage> {
    let bad = |e: png::DecodingError| Error::format("png", e.to_string());
    let decoder = png::Decoder::new(Cursor::new(bytes));
    let mut reader = decoder.read_info().map_err(bad)?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::format("png", "image too large"))?;
    let mut buf = vec![0u8; size];
    let info = reader.next_frame(&mut buf).map_err(bad)?;
    if info.bit_depth != png::BitDepth::Eight {
        return Err(Error::format(
            "png",
            format!("unsupported bit depth {:?}", info.bit_depth),
        ));
    }
    let (w, h) = (info.width as usize, info.height as usize);
    let data = match info.color_type {
        png::ColorType::Rgb => {
            buf.truncate(w * h * 3);
            buf
        }
        png::ColorType::Rgba => buf[..w * h * 4]
            .chunks_exact(4)
            .flat_map(|p| [p[0], p[1], p[2]])
            .collect(),
        other => return Err(Error::format("png", format!("unsupported color type {other:?}"))),
    };
    RgbImage::new(w, h, data)
}

/// Parses `boxes.json` and validates each box on its own.
pub fn parse_boxes(bytes: &[u8]) -> Result<Vec<BoundingBox>> {
    let boxes: Vec<BoundingBox> =
        serde_json::from_slice(bytes).map_err(|e| Error::format("boxes.json", e.to_string()))?;
    for b in &boxes {
        b.validate()?;
    }
    Ok(boxes)
}

/// On-disk `meta.json`: scene metadata plus the sparse map's nominal density.
#[derive(Serialize, Deserialize)]
struct MetaFile {
    #[serde(flatten)]
    meta: SceneMeta,
    sparse_density: f64,
}

/// Parses `meta.json` into the metadata and the sparse density it records.
pub fn parse_meta(bytes: &[u8]) -> Result<(SceneMeta, f64)> {
    let file: MetaFile = serde_json::from_slice(bytes).map_err(|e| Error::format("meta.json", e.to_string()))?;
    file.meta.intrinsics.validate()?;
    if !(file.sparse_density > 0.0 && file.sparse_density <= 1.0) {
        return Err(Error::format(
            "meta.json",
            format!("sparse_density {}", file.sparse_density),
        ));
    }
    Ok((file.meta, file.sparse_density))
}

fn write_file(path: PathBuf, bytes: &[u8]) -> Result<()> {
    fs::write(&path, bytes).map_err(|e| Error::io(&path, e))
}

fn read_file(path: PathBuf) -> Result<Vec<u8>> {
    fs::read(&path).map_err(|e| Error::io(&path, e))
}

/// Writes the five sample files into `dir` (created if missing) and returns `dir`.
pub fn write_sample(sample: &Sample, dir: &Path) -> Result<PathBuf> {
    sample.validate()?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let d = &sample.dense_depth;
    let s = &sample.sparse_depth.map;
    write_file(dir.join(RGB_FILE), &encode_rgb_png(&sample.rgb)?)?;
    write_file(dir.join(DEPTH_FILE), &encode_raster(d.width(), d.height(), d.values()))?;
    write_file(dir.join(SPARSE_FILE), &encode_raster(s.width(), s.height(), s.values()))?;
    let boxes = serde_json::to_vec_pretty(&sample.boxes).expect("boxes serialize");
    write_file(dir.join(BOXES_FILE), &boxes)?;
    let meta = MetaFile {
        meta: sample.meta.clone(),
        sparse_density: sample.sparse_depth.density,
    };
    let meta = serde_json::to_vec_pretty(&meta).expect("meta serializes");
    write_file(dir.join(META_FILE), &meta)?;
    Ok(dir.to_path_buf())
}

pub fn read_sample(dir: &Path) -> Result<Sample> {
    let rgb = decode_rgb_png(&read_file(dir.join(RGB_FILE))?)?;
    let dense_depth = decode_depth(&read_file(dir.join(DEPTH_FILE))?)?;
    let sparse = decode_depth(&read_file(dir.join(SPARSE_FILE))?)?;
    let boxes = parse_boxes(&read_file(dir.join(BOXES_FILE))?)?;
    let (meta, density) = parse_meta(&read_file(dir.join(META_FILE))?)?;
    let sample = Sample {
        rgb,
        dense_depth,
        sparse_depth: SparseDepthMap::new(sparse, density)?,
        boxes,
        meta,
    };
    sample.validate()?;
    Ok(sample)
}

/// Sample directories under `root`, sorted by name.
pub fn list_samples(root: &Path) -> Result<Vec<PathBuf>> {
    let mut dirs = Vec::new();
    for entry in fs::read_dir(root).map_err(|e| Error::io(root, e))? {
        let entry = entry.map_err(|e| Error::io(root, e))?;
        let path = entry.path();
        if path.is_dir() && path.join(META_FILE).is_file() {
            dirs.push(path);
        }
    }
    dirs.sort();
    Ok(dirs)
}

//! `DPF1` float raster codec.
//!
//! Layout: 16-byte header `{b"DPF1", u32 width, u32 height, u32 reserved}`
//! followed by `width * height` little-endian `f32` values, row-major.

use std::fs;
use std::path::Path;

use crate::dataio::DepthMap;
use crate::error::{Error, Result};

pub const RASTER_MAGIC: [u8; 4] = *b"DPF1";
pub const RASTER_HEADER_LEN: usize = 16;

/// Decoded raster; values are unchecked floats.
#[derive(Clone, Debug, PartialEq)]
pub struct Raster {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f32>,
}

pub fn encode_raster(width: usize, height: usize, values: &[f32]) -> Vec<u8> {
    assert_eq!(values.len(), width * height, "raster payload size");
    let mut out = Vec::with_capacity(RASTER_HEADER_LEN + 4 * values.len());
    out.extend_from_slice(&RASTER_MAGIC);
    out.extend_from_slice(&(width as u32).to_le_bytes());
    out.extend_from_slice(&(height as u32).to_le_bytes());
    out.extend_from_slice(&0u32.to_le_bytes());
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn read_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4-byte slice"))
}

pub fn decode_raster(bytes: &[u8]) -> Result<Raster> {
    if bytes.len() < RASTER_HEADER_LEN {
        return Err(Error::format(
            "raster",
            format!("{} bytes is shorter than the header", bytes.len()),
        ));
    }
    if bytes[..4] != RASTER_MAGIC {
        return Err(Error::format("raster", format!("bad magic {:?}", &bytes[..4])));
    }
    let width = read_u32(bytes, 4) as usize;
    let height = read_u32(bytes, 8) as usize;
    if width == 0 || height == 0 {
        return Err(Error::format("raster", format!("empty raster {width}x{height}")));
    }
    let payload = &bytes[RASTER_HEADER_LEN..];
    let expected = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| Error::format("raster", "dimensions overflow"))?;
    if payload.len() != expected {
        return Err(Error::format(
            "raster",
            format!(
                "{width}x{height} needs {expected} payload bytes, found {}",
                payload.len()
            ),
        ));
    }
    let values = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4-byte chunk")))
        .collect();
    Ok(Raster { width, height, values })
}

/// Decodes a raster and enforces depth validity (finite, non-negative).
pub fn decode_depth(bytes: &[u8]) -> Result<DepthMap> {
    let r = decode_raster(bytes)?;
    DepthMap::new(r.width, r.height, r.values).map_err(|e| Error::format("depth raster", e.to_string()))
}

pub fn write_raster(path: &Path, width: usize, height: usize, values: &[f32]) -> Result<()> {
    fs::write(path, encode_raster(width, height, values)).map_err(|e| Error::io(path, e))
}

pub fn read_raster(path: &Path) -> Result<Raster> {
    decode_raster(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

pub fn write_depth(path: &Path, depth: &DepthMap) -> Result<()> {
    write_raster(path, depth.width(), depth.height(), depth.values())
}

pub fn read_depth(path: &Path) -> Result<DepthMap> {
    decode_depth(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

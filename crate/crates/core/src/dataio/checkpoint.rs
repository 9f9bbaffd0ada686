//! Checkpoint directory: `params.bin`, `config.json`, `manifest.json`.
//!
//! `params.bin` layout, all integers little-endian:
//! `b"ADCK"`, `u32 version`, `u32 count`, then per tensor
//! `u32 name_len`, UTF-8 name, `u32 rank`, `rank x u32 dims`,
//! `prod(dims) x f32` values.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use aerodepth_tensor::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ModelConfig, NetworkState};

pub const PARAMS_FILE: &str = "params.bin";
pub const CONFIG_FILE: &str = "config.json";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const PARAMS_MAGIC: [u8; 4] = *b"ADCK";
pub const PARAMS_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    /// SHA-256 (hex) of `config.json`'s canonical encoding.
    pub config_hash: String,
    pub epoch: usize,
    /// Seconds since the Unix epoch.
    pub created_at: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub state: NetworkState,
    pub config: ModelConfig,
    pub epoch: usize,
}

pub fn encode_params(params: &BTreeMap<String, Tensor>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&PARAMS_MAGIC);
    out.extend_from_slice(&PARAMS_VERSION.to_le_bytes());
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (name, t) in params {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::format("params.bin", format!("truncated at byte {}", self.pos)))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }
}

/// Parses `params.bin`. Rejects duplicates, truncation and trailing bytes.
pub fn decode_params(bytes: &[u8]) -> Result<BTreeMap<String, Tensor>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != PARAMS_MAGIC {
        return Err(Error::format("params.bin", "bad magic"));
    }
    let version = r.u32()?;
    if version != PARAMS_VERSION {
        return Err(Error::format("params.bin", format!("unsupported version {version}")));
    }
    let count = r.u32()?;
    let mut params = BTreeMap::new();
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::format("params.bin", "tensor name is not UTF-8"))?
            .to_owned();
        let rank = r.u32()? as usize;
        if rank > 8 {
            return Err(Error::format("params.bin", format!("rank {rank} for {name}")));
        }
        let mut shape = Vec::with_capacity(rank);
        let mut numel = 1usize;
        for _ in 0..rank {
            let d = r.u32()? as usize;
            numel = numel
                .checked_mul(d)
                .ok_or_else(|| Error::format("params.bin", "shape overflows"))?;
            shape.push(d);
        }
        if numel.checked_mul(4).is_none_or(|b| b > r.remaining()) {
            return Err(Error::format("params.bin", format!("{name}: payload truncated")));
        }
        let data = r
            .take(numel * 4)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        if params.insert(name.clone(), Tensor::new(&shape, data)).is_some() {
            return Err(Error::format("params.bin", format!("duplicate tensor {name}")));
        }
    }
    if r.remaining() != 0 {
        return Err(Error::format("params.bin", format!("{} trailing bytes", r.remaining())));
    }
    Ok(params)
}

pub fn parse_manifest(bytes: &[u8]) -> Result<Manifest> {
    serde_json::from_slice(bytes).map_err(|e| Error::format("manifest.json", e.to_string()))
}

pub fn parse_config(bytes: &[u8]) -> Result<ModelConfig> {
    let cfg: ModelConfig = serde_json::from_slice(bytes).map_err(|e| Error::format("config.json", e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

fn write(path: PathBuf, bytes: &[u8]) -> Result<()> {
    fs::write(&path, bytes).map_err(|e| Error::io(&path, e))
}

fn read(path: PathBuf) -> Result<Vec<u8>> {
    fs::read(&path).map_err(|e| Error::io(&path, e))
}

/// Writes a checkpoint directory and returns its path.
pub fn save_checkpoint(state: &NetworkState, config: &ModelConfig, epoch: usize, dir: &Path) -> Result<PathBuf> {
    config.validate()?;
    state.check(config)?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let params: BTreeMap<String, Tensor> = state.iter().map(|(k, v)| (k.clone(), v.clone())).collect();
    write(dir.join(PARAMS_FILE), &encode_params(&params))?;
    write(
        dir.join(CONFIG_FILE),
        &serde_json::to_vec_pretty(config).expect("config serializes"),
    )?;
    let manifest = Manifest {
        config_hash: config.hash(),
        epoch,
        created_at: SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
    };
    write(
        dir.join(MANIFEST_FILE),
        &serde_json::to_vec_pretty(&manifest).expect("manifest serializes"),
    )?;
    Ok(dir.to_path_buf())
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    parse_manifest(&read(dir.join(MANIFEST_FILE))?)
}

/// Loads a checkpoint, verifying the config hash and every parameter shape.
pub fn load_checkpoint(dir: &Path) -> Result<Checkpoint> {
    let manifest = read_manifest(dir)?;
    let config = parse_config(&read(dir.join(CONFIG_FILE))?)?;
    let actual = config.hash();
    if actual != manifest.config_hash {
        return Err(Error::ConfigHash {
            expected: manifest.config_hash,
            actual,
        });
    }
    let params = decode_params(&read(dir.join(PARAMS_FILE))?)?;
    let state = NetworkState::from_params(&config, params)?;
    Ok(Checkpoint {
        state,
        config,
        epoch: manifest.epoch,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn params_codec_round_trip() {
        let mut m = BTreeMap::new();
        m.insert("a".to_string(), Tensor::new(&[2, 1], vec![1.5, -0.0]));
        m.insert("b.c".to_string(), Tensor::scalar(f32::MIN_POSITIVE));
        let bytes = encode_params(&m);
        assert_eq!(decode_params(&bytes).unwrap(), m);
        for cut in 0..bytes.len() {
            assert!(decode_params(&bytes[..cut]).is_err(), "prefix {cut}");
        }
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(decode_params(&extra).is_err());
    }

    #[test]
    fn huge_declared_shape_is_rejected_without_allocating() {
        let mut b = Vec::from(PARAMS_MAGIC);
        b.extend_from_slice(&1u32.to_le_bytes());
        b.extend_from_slice(&1u32.to_le_bytes());
        b.extend_from_slice(&1u32.to_le_bytes());
        b.push(b'x');
        b.extend_from_slice(&2u32.to_le_bytes());
        b.extend_from_slice(&u32::MAX.to_le_bytes());
        b.extend_from_slice(&u32::MAX.to_le_bytes());
        assert!(decode_params(&b).is_err());
    }
}

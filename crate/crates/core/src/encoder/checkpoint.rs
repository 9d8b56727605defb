//! Binary checkpoint: magic, format version, config header, then the
//! projection matrices as little-endian `f64`.

use std::path::Path;

use super::{EncoderConfig, EncoderParams};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"RLENCODR";
const VERSION: u32 = 1;
const HEADER_LEN: usize = 8 + 4 + 8 + 8 + 1;

pub(crate) fn encode(params: &EncoderParams) -> Vec<u8> {
    let n = params.query.len() * if params.document.is_some() { 2 } else { 1 };
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * n);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(params.config.feature_dim as u64).to_le_bytes());
    out.extend_from_slice(&(params.config.dim as u64).to_le_bytes());
    out.push(params.config.shared as u8);
    for x in params.query.iter().chain(params.document.iter().flatten()) {
        out.extend_from_slice(&x.to_le_bytes());
    }
    out
}

pub(crate) fn decode(bytes: &[u8]) -> Result<EncoderParams> {
    if bytes.len() < HEADER_LEN || &bytes[..8] != MAGIC {
        return Err(Error::Checkpoint("not an encoder checkpoint".into()));
    }
    let u64_at = |at: usize| u64::from_le_bytes(bytes[at..at + 8].try_into().unwrap());
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let config = EncoderConfig {
        feature_dim: u64_at(12) as usize,
        dim: u64_at(20) as usize,
        shared: match bytes[28] {
            0 => false,
            1 => true,
            b => return Err(Error::Checkpoint(format!("bad shared flag {b}"))),
        },
    };
    let size = config
        .feature_dim
        .checked_mul(config.dim)
        .ok_or_else(|| Error::Checkpoint("dimensions overflow".into()))?;
    let mats = if config.shared { 1 } else { 2 };
    if bytes.len() != HEADER_LEN + 8 * size * mats {
        return Err(Error::Checkpoint(format!(
            "expected {} bytes of weights, found {}",
            8 * size * mats,
            bytes.len() - HEADER_LEN
        )));
    }
    let mut values = bytes[HEADER_LEN..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()));
    let query: Vec<f64> = values.by_ref().take(size).collect();
    let document = (!config.shared).then(|| values.collect());
    EncoderParams::from_matrices(config, query, document)
}

pub fn save_checkpoint(params: &EncoderParams, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, encode(params)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<EncoderParams> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

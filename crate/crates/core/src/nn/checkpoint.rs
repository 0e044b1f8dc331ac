//! Binary parameter checkpoints.
//!
//! Layout: magic `GRSK`, format version (u32 LE), descriptor length (u32 LE)
//! and UTF-8 descriptor text, then every parameter as an f64 LE in
//! declaration order. The descriptor holds the architecture keys plus any
//! extra `key=value` lines supplied by the caller.

use std::fs;
use std::path::Path;

use super::{Architecture, ModelParams};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"GRSK";
pub const VERSION: u32 = 1;

pub fn encode(params: &ModelParams, extra: &str) -> Vec<u8> {
    let mut descriptor = params.architecture().descriptor();
    descriptor.push_str(extra);
    let mut out = Vec::with_capacity(12 + descriptor.len() + 8 * params.n_params());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(descriptor.len() as u32).to_le_bytes());
    out.extend_from_slice(descriptor.as_bytes());
    for t in params.tensors() {
        for v in t {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

/// Decodes a checkpoint, returning the parameters and full descriptor text.
pub fn decode(bytes: &[u8], path: &Path) -> Result<(ModelParams, String)> {
    let bad = |message: &str| Error::Checkpoint {
        path: path.to_path_buf(),
        message: message.to_string(),
    };
    if bytes.len() < 12 || &bytes[..4] != MAGIC {
        return Err(bad("not a checkpoint (bad magic)"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(bad(&format!("unsupported version {version}")));
    }
    let len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let text_end = 12 + len;
    let descriptor = bytes
        .get(12..text_end)
        .and_then(|b| std::str::from_utf8(b).ok())
        .ok_or_else(|| bad("truncated or non-UTF-8 descriptor"))?
        .to_string();
    let arch = Architecture::from_descriptor(&descriptor)?;
    let body = &bytes[text_end..];
    if body.len() != 8 * arch.n_params() {
        return Err(bad(&format!(
            "expected {} parameters, file holds {} bytes",
            arch.n_params(),
            body.len()
        )));
    }
    let values: Vec<f64> = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let mut params = ModelParams::zeros(&arch);
    params.load_flat(&values)?;
    Ok((params, descriptor))
}

pub fn save(path: &Path, params: &ModelParams, extra: &str) -> Result<()> {
    fs::write(path, encode(params, extra)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<(ModelParams, String)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}

//! Binary feature cache.
//!
//! Little-endian layout: `b"VWF1"`, `u32 n_frames`, `u32 feat_dim`,
//! `f32 frame_shift_ms`, `n_frames·feat_dim` row-major `f64` values, then
//! one V/UV byte per frame.

use std::fs;
use std::path::Path;

use crate::dsp::ConditionFeatures;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"VWF1";

pub fn encode_features(feat: &ConditionFeatures) -> Vec<u8> {
    let (n, d) = (feat.n_frames(), feat.feat_dim());
    let mut out = Vec::with_capacity(16 + n * d * 8 + n);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(n as u32).to_le_bytes());
    out.extend_from_slice(&(d as u32).to_le_bytes());
    out.extend_from_slice(&(feat.frame_shift_ms as f32).to_le_bytes());
    for v in feat.frames.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&feat.vuv);
    out
}

pub fn decode_features(bytes: &[u8], path: &Path) -> Result<ConditionFeatures> {
    if bytes.len() < 16 || &bytes[..4] != MAGIC {
        return Err(Error::format(path, "not a VWF1 feature cache"));
    }
    let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap()) as usize;
    let (n, d) = (word(4), word(8));
    let shift = f32::from_le_bytes(bytes[12..16].try_into().unwrap());
    let expected = 16 + n * d * 8 + n;
    if bytes.len() != expected {
        return Err(Error::format(
            path,
            format!("expected {expected} bytes for {n}×{d} frames, found {}", bytes.len()),
        ));
    }
    let values = bytes[16..16 + n * d * 8]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let vuv = bytes[16 + n * d * 8..].to_vec();
    ConditionFeatures::new(Tensor::new(vec![n, d], values)?, vuv, f64::from(shift))
        .map_err(|e| Error::format(path, e.to_string()))
}

pub fn write_features(path: impl AsRef<Path>, feat: &ConditionFeatures) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_features(feat)).map_err(|e| Error::io(path, e))
}

pub fn read_features(path: impl AsRef<Path>) -> Result<ConditionFeatures> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_features(&bytes, path)
}

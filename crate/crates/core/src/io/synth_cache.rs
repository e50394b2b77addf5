//! Binary cache of a landmark dataset.
//!
//! Layout, little-endian: `"NDFS"`, version, count, landmarks, image side
//! (all `u32`), then per sample `side²` pixel bytes followed by `2L` `f32`
//! coordinates in `x, y` order.

use std::path::Path;

use crate::cascade::{GrayImage, LandmarkSet, Shape};
use crate::error::{NdfError, Result};

pub const MAGIC: &[u8; 4] = b"NDFS";
pub const CACHE_VERSION: u32 = 1;
const HEADER: usize = 20;

pub fn encode_synth_cache(set: &LandmarkSet) -> Result<Vec<u8>> {
    let l = set.landmarks();
    let side = set.images.first().map_or(0, |i| i.width);
    let mut out = Vec::with_capacity(HEADER + set.len() * (side * side + 8 * l));
    out.extend_from_slice(MAGIC);
    for v in [CACHE_VERSION, set.len() as u32, l as u32, side as u32] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for (img, shape) in set.images.iter().zip(&set.shapes) {
        if img.width != side || img.height != side || shape.len() != l {
            return Err(NdfError::Export(
                "cache needs square images of one size and a fixed landmark count".into(),
            ));
        }
        out.extend_from_slice(&img.pixels);
        for v in shape.flatten() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    Ok(out)
}

fn cache_err(offset: usize, message: impl Into<String>) -> NdfError {
    NdfError::Cache {
        offset,
        message: message.into(),
    }
}

pub fn decode_synth_cache(bytes: &[u8]) -> Result<LandmarkSet> {
    if bytes.len() < HEADER {
        return Err(cache_err(
            bytes.len(),
            format!("expected {HEADER} header bytes, found {}", bytes.len()),
        ));
    }
    if &bytes[..4] != MAGIC {
        return Err(cache_err(0, "bad magic, expected NDFS"));
    }
    let word = |i: usize| {
        u32::from_le_bytes([bytes[i], bytes[i + 1], bytes[i + 2], bytes[i + 3]]) as usize
    };
    let version = word(4) as u32;
    if version != CACHE_VERSION {
        return Err(cache_err(4, format!("unsupported cache version {version}")));
    }
    let (count, l, side) = (word(8), word(12), word(16));
    let record = side * side + 8 * l;
    let expected = HEADER + count * record;
    if bytes.len() != expected {
        return Err(cache_err(
            HEADER,
            format!(
                "expected {expected} bytes for {count} samples, found {}",
                bytes.len()
            ),
        ));
    }
    let mut images = Vec::with_capacity(count);
    let mut shapes = Vec::with_capacity(count);
    for rec in bytes[HEADER..].chunks_exact(record) {
        let (pixels, coords) = rec.split_at(side * side);
        images.push(GrayImage::new(side, side, pixels.to_vec())?);
        let flat: Vec<f64> = coords
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
            .collect();
        shapes.push(Shape::from_flat(&flat));
    }
    Ok(LandmarkSet { images, shapes })
}

pub fn write_synth_cache(set: &LandmarkSet, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, encode_synth_cache(set)?)?;
    Ok(())
}

pub fn read_synth_cache(path: impl AsRef<Path>) -> Result<LandmarkSet> {
    decode_synth_cache(&std::fs::read(path)?)
}

//! `EFV1` clip files: magic, `u32` little-endian T, H, W, D, then
//! `T·H·W·D` unsigned bytes in (t, h, w, c) row-major order.

use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::{Scalar, Tensor};
use crate::tokenizer::{normalize_clip, Geometry};

pub const CLIP_MAGIC: &[u8; 4] = b"EFV1";
pub const CLIP_HEADER_LEN: usize = 20;

/// Raw 8-bit clip.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Clip {
    pub geometry: Geometry,
    pub pixels: Vec<u8>,
}

impl Clip {
    pub fn new(geometry: Geometry, pixels: Vec<u8>) -> Result<Self> {
        if geometry.shape().contains(&0) {
            return Err(Error::Geometry(format!("clip extents must be positive, got {geometry}")));
        }
        if pixels.len() != geometry.numel() {
            return Err(Error::Dimension {
                op: "Clip::new",
                lhs: geometry.shape().to_vec(),
                rhs: vec![pixels.len()],
            });
        }
        Ok(Self { geometry, pixels })
    }

    /// Pixels mapped to `[-1, 1]`.
    pub fn to_tensor<S: Scalar>(&self) -> Tensor<S> {
        normalize_clip(&self.geometry, &self.pixels).expect("length checked at construction")
    }
}

pub fn encode_clip(clip: &Clip) -> Vec<u8> {
    let mut out = Vec::with_capacity(CLIP_HEADER_LEN + clip.pixels.len());
    out.extend_from_slice(CLIP_MAGIC);
    for e in clip.geometry.shape() {
        out.extend_from_slice(&(e as u32).to_le_bytes());
    }
    out.extend_from_slice(&clip.pixels);
    out
}

/// Parses clip bytes; `path` only labels errors.
pub fn decode_clip(bytes: &[u8], path: &Path) -> Result<Clip> {
    if bytes.len() < 4 || &bytes[..4] != CLIP_MAGIC {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
            expected: "EFV1",
            found: bytes[..bytes.len().min(4)].to_vec(),
        });
    }
    if bytes.len() < CLIP_HEADER_LEN {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            expected: CLIP_HEADER_LEN,
            found: bytes.len(),
        });
    }
    let dim = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
    let geometry = Geometry::new(dim(0), dim(1), dim(2), dim(3));
    if geometry.shape().contains(&0) {
        return Err(Error::format(path, format!("zero extent in clip header {geometry}")));
    }
    let declared = geometry
        .shape()
        .iter()
        .try_fold(1usize, |acc, &e| acc.checked_mul(e))
        .ok_or_else(|| Error::format(path, format!("clip header {geometry} overflows")))?;
    let payload = &bytes[CLIP_HEADER_LEN..];
    if payload.len() < declared {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            expected: CLIP_HEADER_LEN + declared,
            found: bytes.len(),
        });
    }
    if payload.len() > declared {
        return Err(Error::PayloadMismatch {
            path: path.to_path_buf(),
            declared,
            actual: payload.len(),
        });
    }
    Ok(Clip {
        geometry,
        pixels: payload.to_vec(),
    })
}

pub fn write_clip(path: &Path, clip: &Clip) -> Result<()> {
    std::fs::write(path, encode_clip(clip)).map_err(|e| Error::io(path, e))
}

pub fn read_clip(path: &Path) -> Result<Clip> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_clip(&bytes, path)
}

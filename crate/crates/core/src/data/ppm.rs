//! Binary PPM (`P6`, maxval 255) frames.

use std::path::Path;

use crate::data::Clip;
use crate::error::{Error, Result};
use crate::tokenizer::Geometry;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PpmImage {
    pub width: usize,
    pub height: usize,
    /// RGB triples, row-major.
    pub pixels: Vec<u8>,
}

struct Header<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Header<'_> {
    fn skip_space_and_comments(&mut self) {
        while let Some(&b) = self.buf.get(self.pos) {
            if b == b'#' {
                while self.buf.get(self.pos).is_some_and(|&c| c != b'\n') {
                    self.pos += 1;
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn number(&mut self, what: &str, path: &Path) -> Result<usize> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.buf.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        std::str::from_utf8(&self.buf[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::format(path, format!("missing or invalid {what} in PPM header")))
    }
}

/// Parses one P6 image; `path` only labels errors.
pub fn parse_ppm(bytes: &[u8], path: &Path) -> Result<PpmImage> {
    if bytes.len() < 2 || &bytes[..2] != b"P6" {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
            expected: "P6",
            found: bytes[..bytes.len().min(2)].to_vec(),
        });
    }
    let mut h = Header { buf: bytes, pos: 2 };
    if !h.buf.get(2).is_some_and(|b| b.is_ascii_whitespace() || *b == b'#') {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
            expected: "P6",
            found: bytes[..bytes.len().min(3)].to_vec(),
        });
    }
    let width = h.number("width", path)?;
    let height = h.number("height", path)?;
    let maxval = h.number("maxval", path)?;
    if maxval != 255 {
        return Err(Error::format(path, format!("maxval {maxval} unsupported, expected 255")));
    }
    if width == 0 || height == 0 {
        return Err(Error::format(path, "zero image extent"));
    }
    // Exactly one whitespace byte separates the header from the raster.
    if !h.buf.get(h.pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(Error::format(path, "no whitespace after maxval"));
    }
    let raster = &bytes[h.pos + 1..];
    let need = width * height * 3;
    if raster.len() < need {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            expected: h.pos + 1 + need,
            found: bytes.len(),
        });
    }
    if raster.len() > need {
        return Err(Error::PayloadMismatch {
            path: path.to_path_buf(),
            declared: need,
            actual: raster.len(),
        });
    }
    Ok(PpmImage {
        width,
        height,
        pixels: raster.to_vec(),
    })
}

/// Indices `⌊i·available/frames⌋` for `i < frames`.
pub fn subsample_indices(available: usize, frames: usize) -> Vec<usize> {
    (0..frames).map(|i| i * available / frames).collect()
}

/// Stacks the `*.ppm` files of `dir`, in lexicographic file-name order,
/// into a `frames × H × W × 3` clip, subsampling uniformly when the
/// directory holds more frames.
pub fn ingest_ppm_sequence(dir: &Path, frames: usize) -> Result<Clip> {
    let mut paths: Vec<_> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "ppm"))
        .collect();
    paths.sort();
    if frames == 0 || paths.len() < frames {
        return Err(Error::Data(format!(
            "{}: {} PPM frames, need at least {frames}",
            dir.display(),
            paths.len()
        )));
    }
    let mut size = None;
    let mut pixels = Vec::new();
    for i in subsample_indices(paths.len(), frames) {
        let path = &paths[i];
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let img = parse_ppm(&bytes, path)?;
        match size {
            None => size = Some((img.height, img.width)),
            Some(s) if s != (img.height, img.width) => {
                return Err(Error::Geometry(format!(
                    "{}: frame is {}x{}, earlier frames are {}x{}",
                    path.display(),
                    img.width,
                    img.height,
                    s.1,
                    s.0
                )))
            }
            Some(_) => {}
        }
        pixels.extend_from_slice(&img.pixels);
    }
    let (height, width) = size.expect("at least one frame");
    Clip::new(Geometry::new(frames, height, width, 3), pixels)
}

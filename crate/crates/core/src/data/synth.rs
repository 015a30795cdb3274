use std::path::{Path, PathBuf};

use crate::data::{write_clip, Clip, Entry, Manifest};
use crate::error::{Error, Result};
use crate::model::default_labels;
use crate::numerics::Rng;
use crate::tokenizer::Geometry;

pub const MANIFEST_NAME: &str = "manifest.tsv";

/// Left column of class `c`'s block: classes are spread evenly across the
/// frame width.
fn block_column(c: usize, classes: usize, width: usize, block: usize) -> usize {
    if classes <= 1 {
        0
    } else {
        c * (width - block) / (classes - 1)
    }
}

/// Temporal frequency (cycles per clip) of class `c`.
fn block_frequency(c: usize, frames: usize) -> usize {
    1 + c % (frames / 2).max(1)
}

/// One synthetic clip of class `c`.
///
/// Gaussian grey background with a bright block whose column and flicker
/// frequency depend on the class; the block's row is random per clip.
pub fn synth_clip(c: usize, classes: usize, geometry: &Geometry, rng: &mut Rng) -> Clip {
    let Geometry {
        frames,
        height,
        width,
        channels,
    } = *geometry;
    let bh = (height / 4).max(1);
    let bw = (width / 4).max(1);
    let x0 = block_column(c, classes, width, bw);
    let y0 = rng.below(height - bh + 1);
    let freq = block_frequency(c, frames) as f64;
    let mut pixels = Vec::with_capacity(geometry.numel());
    for t in 0..frames {
        let phase = 2.0 * std::f64::consts::PI * freq * t as f64 / frames as f64;
        let level = 160.0 + 95.0 * phase.cos();
        for y in 0..height {
            for x in 0..width {
                let inside = (y0..y0 + bh).contains(&y) && (x0..x0 + bw).contains(&x);
                for _ in 0..channels {
                    let v = if inside { level } else { 64.0 + 16.0 * rng.gaussian() };
                    pixels.push(v.round().clamp(0.0, 255.0) as u8);
                }
            }
        }
    }
    Clip::new(*geometry, pixels).expect("pixel count matches geometry")
}

/// Writes `n` clips per class under `out/clips` and a balanced manifest at
/// `out/manifest.tsv`.
pub fn synth_dataset(n: usize, classes: usize, geometry: &Geometry, seed: u64, out: &Path) -> Result<Manifest> {
    if n == 0 || classes == 0 {
        return Err(Error::Config("synthetic set needs n ≥ 1 and at least one class".into()));
    }
    if geometry.shape().contains(&0) {
        return Err(Error::Geometry(format!("synthetic geometry {geometry} has a zero extent")));
    }
    let clips = out.join("clips");
    std::fs::create_dir_all(&clips).map_err(|e| Error::io(&clips, e))?;
    let root = Rng::new(seed);
    let mut entries = Vec::with_capacity(n * classes);
    for c in 0..classes {
        for k in 0..n {
            let clip = synth_clip(c, classes, geometry, &mut root.derive2(c as u64, k as u64));
            let rel = PathBuf::from("clips").join(format!("c{c:02}_{k:04}.efv"));
            write_clip(&out.join(&rel), &clip)?;
            entries.push(Entry { path: rel, label: c });
        }
    }
    let manifest = Manifest::new(default_labels(classes), entries, out.to_path_buf())?;
    manifest.write(&out.join(MANIFEST_NAME))?;
    Ok(manifest)
}

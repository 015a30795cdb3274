//! Clip and manifest formats, frame ingestion, synthetic data, splitting
//! and evaluation metrics.

mod clip;
mod manifest;
mod metrics;
mod ppm;
mod split;
mod synth;

pub use clip::{decode_clip, encode_clip, read_clip, write_clip, Clip, CLIP_HEADER_LEN, CLIP_MAGIC};
pub use manifest::{Entry, Manifest};
pub use metrics::{evaluate, EvalReport};
pub use ppm::{ingest_ppm_sequence, parse_ppm, subsample_indices, PpmImage};
pub use split::{stratified_split, SplitRatio};
pub use synth::{synth_clip, synth_dataset, MANIFEST_NAME};

use crate::numerics::Tensor;

/// A normalised clip and its class.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub clip: Tensor<f32>,
    pub label: usize,
}

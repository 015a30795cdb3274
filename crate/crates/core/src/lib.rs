//! EngageFormer: a three-view video transformer for affective-state
//! classification.
//!
//! The forward pass tokenises a clip at three tubelet sizes, runs one
//! encoder stack per view with cross-view attention fusion between
//! adjacent views, pools each view into a single vector, mixes the pooled
//! vectors with a global encoder and classifies the pooled result.

pub mod config;
pub mod data;
pub mod encoder;
pub mod error;
pub mod fusion;
pub mod model;
pub mod numerics;
pub mod params;
pub mod tokenizer;
pub mod training;

pub use error::{Error, Result};
pub use numerics::{Rng, Scalar, Tensor};

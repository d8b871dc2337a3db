//! Video-to-audio generation with frame-level object conditioning.
//!
//! The pipeline runs `scene → grounding / embedding → diffusion → codec →
//! metrics` on scripted audio-visual scenes, so every stage has an exact
//! ground truth to be checked against.

pub mod cli;
pub mod codec;
pub mod config;
pub mod dataset;
pub mod diffusion;
pub mod embedding;
pub mod error;
pub mod grounding;
pub mod matrix;
pub mod metrics;
pub mod params;
pub mod pipeline;
pub mod rng;
pub mod scene;
pub mod tape;

pub use error::{Error, Result};
pub use matrix::Matrix;

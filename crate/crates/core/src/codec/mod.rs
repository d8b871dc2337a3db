//! Mel analysis, the latent auto-encoder, and waveform reconstruction.

pub mod mel;
pub mod vae;
pub mod vocoder;

pub use mel::{compute_mel, MelAnalyzer, MelParams, MelSpectrogram};
pub use vae::{vae_decode, vae_encode, vae_loss, vae_sample, Latent, TinyVae, TinyVaeShape, Vae};
pub use vocoder::reconstruct_waveform;

//! Latent diffusion: noise schedule, conditioned denoiser, training
//! objective and guided sampling.

pub mod model;
pub mod sample;
pub mod schedule;
pub mod train;

pub use model::{
    resample_conditioner, Branch, ConditionerSet, Denoiser, DenoiserConfig, FusionMode, LatentNorm, Modalities,
};
pub use sample::{cfg_combine, sample, GuidanceConfig};
pub use schedule::{make_schedule, q_sample, NoiseSchedule};
pub use train::{train, training_loss, EpsModel, TrainConfig, TrainItem, TrainLog};

use crate::error::Result;
use crate::matrix::Matrix;

/// One noise prediction for a normalized `C × T_lat` latent.
pub fn denoise_step_predict(z_t: &Matrix, t: usize, cond: &ConditionerSet, model: &Denoiser) -> Result<Matrix> {
    model.predict(z_t, t, cond, Branch::Conditional)
}

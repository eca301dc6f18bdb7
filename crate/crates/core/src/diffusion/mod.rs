//! Noise schedules, EDM preconditioning, the denoiser abstraction with exact
//! Gaussian / Gaussian-mixture oracles, and the EDM training objective.

mod denoiser;
pub mod gaussian;
mod loss;
mod precondition;
mod schedule;
mod train;

pub use denoiser::{score_from_denoiser, AnalyticSpec, Denoise, Denoiser, NeuralDenoiser, Stage};
pub(crate) use denoiser::{check_input, map_items};
pub use gaussian::{Gaussian, GaussianMixture};
pub use loss::{edm_loss_with, edm_train_loss, weighted_denoising_loss};
pub use precondition::{
    precondition_apply, precondition_apply_per_item, with_noise_channel, Precondition, DEFAULT_SIGMA_DATA,
};
pub use schedule::{NoiseSchedule, ScheduleKind};
pub use train::{denoiser_network, train_denoiser, DenoiserTrainConfig, DenoiserTraining, EpochLoss};

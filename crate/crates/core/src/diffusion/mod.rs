//! Toy diffusion model: schedule, denoiser, sampler, data and pretraining.

mod checkpoint;
mod dataset;
mod denoiser;
mod pretrain;
mod sampler;
mod schedule;

pub use checkpoint::{ModelCheckpoint, FORMAT_VERSION};
pub(crate) use checkpoint::write_json_atomic;
pub use dataset::{DatasetSpec, ToyDataset, SHAPE_CLASSES};
pub use denoiser::{time_embedding, Denoiser, DenoiserConfig, ADAPTER_PREFIX, BASE_PREFIX};
pub use pretrain::{denoising_loss, pretrain, PretrainConfig};
pub use sampler::{
    ddim_coefficients, ddim_step, posterior_mean, predict_clean, sample_trajectories,
    sample_trajectory, step_grid, transition_logprob, transition_logprob_graph, DdimCoefficients,
    SamplerConfig, StepOutput, Trajectory,
};
pub use schedule::{NoiseSchedule, ScheduleParams};

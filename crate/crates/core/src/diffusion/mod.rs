//! Toy conditional diffusion model over 16x16 grayscale shapes.

mod denoiser;
mod pretrain;
mod sampler;
mod schedule;
pub mod shapes;

pub use denoiser::{
    eps_on, predict_mu, predict_mu_batch, predict_mu_on, time_embedding, Denoiser, DenoiserConfig,
    Parameterization, CLASS_EMBED,
};
pub use pretrain::{pretrain, pretrain_loss, pretrain_step, LossWeighting, PretrainConfig};
pub use sampler::{
    gaussian, replay, sample_trajectories, sample_trajectory, SampleRequest, Trajectory,
};
pub use schedule::{
    forward_diffuse, make_schedule, mix, posterior_mean, reverse_step, NoiseSchedule,
    ScheduleKind, ScheduleSpec, SIGMA_MIN,
};
pub use shapes::{render, Placement, ShapeClass, ShapeDatasetSpec};

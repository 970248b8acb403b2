//! Discrete-time diffusion over joint `(x, xbar)` trajectories: noise
//! schedules, forward noising, the joint training loss and two
//! classifier-guided samplers.

mod analytic;
mod loss;
mod sampler;
mod schedule;

pub use analytic::{GaussianNoise, NoGuidance};
pub use loss::{prepare_batch, training_loss, training_loss_with, BoundBundle, JointModel, LossBreakdown, TrainBatch};
pub use sampler::{
    apply_conditioning, denoise_step, dpm1_grid, dpm1_sample, forward_noise, sample_plan, GuidanceConfig, NoiseModel,
    ReturnModel, Sampler,
};
pub use schedule::{make_schedule, NoiseSchedule, ScheduleConfig, ScheduleKind};

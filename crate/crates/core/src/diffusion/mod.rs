//! Conditional DDPM backbone.

mod model;
mod process;
mod schedule;
mod train;
mod unet;

pub use model::{BoundDdpm, Ddpm, DomainMode, DDPM_KIND};
pub use process::{
    ddpm_loss, ddpm_loss_at, denoise_from, denoise_traced, p_sample_step, q_sample, q_sample_each, NoisePredictor,
};
pub use schedule::{NoiseSchedule, ScheduleParams};
pub use train::{smooth, train_ddpm, DdpmTrainParams, LossLog};
pub use unet::{UNet, UNetConfig};

//! Conditional diffusion prior over latent grids.

pub mod model;
pub mod nn;
pub mod sampler;
pub mod schedule;
pub mod train;
pub mod unet;

pub use model::{featurize, Denoiser, OracleModel, VelocityModel};
pub use sampler::{ddim_step, denoise, guidance_step, warp_weight_map, GuidanceConfig, GuidanceOutcome, SampleTrace};
pub use schedule::{make_schedule, noise, predict_eps, predict_z0, velocity_target, NoiseSchedule};
pub use train::{train, TrainConfig, TrainReport};

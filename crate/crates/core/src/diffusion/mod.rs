//! Forward and reverse diffusion with a velocity-parameterized model.

pub mod process;
pub mod sampler;
pub mod schedule;

pub use process::{forward_marginal, posterior_step, v_target, x0_from_v, DiffusionSample};
pub use sampler::{sample, timesteps, GaussianOracle, SamplerConfig, StridedVariance, VelocityModel};
pub use schedule::{build_schedule, NoiseSchedule, Transition};

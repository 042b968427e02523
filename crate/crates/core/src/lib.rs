//! Text-guided voice generation and conversion with v-prediction diffusion and
//! rescaled classifier-free guidance, at toy scale.

pub mod denoiser;
pub mod diffusion;
pub mod dreamvc;
pub mod dreamvg;
pub mod error;
pub mod guidance;
pub mod nn;
pub mod rng;
pub mod scalar;
pub mod voicedb;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Matrix32 = nn::Matrix<f32>;
pub type Matrix64 = nn::Matrix<f64>;
pub type ParamStore32 = nn::ParamStore<f32>;
pub type ParamStore64 = nn::ParamStore<f64>;
pub type Denoiser32 = denoiser::Denoiser<f32>;
pub type Denoiser64 = denoiser::Denoiser<f64>;
pub type DreamVg32 = dreamvg::DreamVg<f32>;
pub type DreamVg64 = dreamvg::DreamVg<f64>;
pub type DreamVc32 = dreamvc::DreamVc<f32>;
pub type DreamVc64 = dreamvc::DreamVc<f64>;

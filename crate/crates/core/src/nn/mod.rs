//! Minimal trainable neural substrate.

pub mod checkpoint;
pub mod layers;
pub mod matrix;
pub mod params;
pub mod train;

pub use layers::{attend, cross_attention, film_apply, sinusoidal_embed, Attention, Dense, Film, Init};
pub use matrix::Matrix;
pub use params::{Adam, AdamConfig, Grads, ParamId, ParamStore};
pub use train::{finite_diff_check, fit_step, relative_error, GradCheckReport, Objective};

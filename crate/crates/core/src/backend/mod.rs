//! Denoiser, scheduler and codec contracts, plus deterministic test doubles.
//!
//! Pipelines only talk to these traits. [`MockDenoiser`] and [`MockCodec`]
//! make every pipeline runnable and bit-reproducible without model weights;
//! [`AdapterDenoiser`] forwards predictions to an external server speaking
//! the protocol in [`wire`].

mod codec;
mod ddim;
mod mock;
mod noise;
mod tensor;
pub mod wire;

use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::error::Result;

pub use codec::MockCodec;
pub use ddim::{DdimConfig, DdimScheduler};
pub use mock::MockDenoiser;
pub use noise::{gaussian, init_noise};
pub use tensor::{LatentTensor, Shape};
pub use wire::AdapterDenoiser;

/// Which branch of a pipeline a prediction belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    /// A plain ERP canvas or a window cropped from it.
    Canvas,
    Panorama,
    Perspective(usize),
}

/// Metadata passed along with each prediction.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DenoiseContext {
    pub branch: Branch,
    pub path_id: usize,
    pub foreground: bool,
    /// Whether the panorama LoRA is active for this path.
    pub lora: bool,
    /// Horizontal circular padding for convolutions.
    pub circular: bool,
}

impl DenoiseContext {
    pub fn new(branch: Branch) -> Self {
        Self {
            branch,
            path_id: 0,
            foreground: false,
            lora: false,
            circular: false,
        }
    }
}

/// One denoising path's latent at a point in the reverse process.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionState {
    pub latent: LatentTensor,
    /// Index of the next step to run, counting down from `T - 1`.
    pub t_index: usize,
    pub path_id: usize,
    pub rng_seed: u64,
}

/// Predicts the noise residual of a latent. Must be deterministic and shape preserving.
pub trait Denoiser: Send + Sync {
    fn predict(
        &self,
        latent: &LatentTensor,
        t_index: usize,
        prompt: &str,
        ctx: &DenoiseContext,
    ) -> Result<LatentTensor>;
}

impl<D: Denoiser + ?Sized> Denoiser for &D {
    fn predict(&self, latent: &LatentTensor, t_index: usize, prompt: &str, ctx: &DenoiseContext) -> Result<LatentTensor> {
        (**self).predict(latent, t_index, prompt, ctx)
    }
}

impl<D: Denoiser + ?Sized> Denoiser for Box<D> {
    fn predict(&self, latent: &LatentTensor, t_index: usize, prompt: &str, ctx: &DenoiseContext) -> Result<LatentTensor> {
        (**self).predict(latent, t_index, prompt, ctx)
    }
}

impl<D: Denoiser + ?Sized> Denoiser for std::sync::Arc<D> {
    fn predict(&self, latent: &LatentTensor, t_index: usize, prompt: &str, ctx: &DenoiseContext) -> Result<LatentTensor> {
        (**self).predict(latent, t_index, prompt, ctx)
    }
}

pub trait Scheduler: Send + Sync {
    fn num_steps(&self) -> usize;

    fn init_sigma(&self) -> f64;

    /// Cumulative signal level ᾱ at `t_index`.
    fn alpha_bar(&self, t_index: usize) -> Result<f64>;

    /// Latent at `t_index - 1` from the latent at `t_index` and its residual.
    fn step(&self, latent: &LatentTensor, residual: &LatentTensor, t_index: usize) -> Result<LatentTensor>;

    /// Forward-noises a clean latent to the level of `t_index`.
    fn add_noise(&self, clean: &LatentTensor, noise: &LatentTensor, t_index: usize) -> Result<LatentTensor> {
        let ab = self.alpha_bar(t_index)?;
        let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
        clean.zip_map(noise, |x, n| (a * f64::from(x) + b * f64::from(n)) as f32)
    }
}

pub trait Codec: Send + Sync {
    /// Image pixels per latent cell along each axis.
    fn factor(&self) -> usize;

    fn channels(&self) -> usize;

    fn encode(&self, img: &RgbImage) -> Result<LatentTensor>;

    fn decode(&self, latent: &LatentTensor) -> Result<RgbImage>;

    /// Latent of a uniformly colored image, `rgb` in `[0, 1]`.
    fn color_to_latent(&self, rgb: [f32; 3], height: usize, width: usize) -> LatentTensor;
}

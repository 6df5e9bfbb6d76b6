//! Co-learning single-step diffusion super-resolution at desk scale.
//!
//! A frozen multi-step teacher is distilled into a one-step student while a
//! learnable downsampler and two discriminators (HR and LR) train jointly
//! with it. Everything runs on a small CPU tensor engine with reverse-mode
//! autodiff, so every loss and sampler identity can be checked in tests.
//!
//! - [`tensor`]: tensors, autodiff tape, RNG, Adam
//! - [`nn`]: U-Net backbone, conv downsampler, discriminator
//! - [`diffusion`]: shifting-sequence schedule and deterministic sampler
//! - [`colearn`]: losses, training step, teacher pretraining
//! - [`data`]: synthetic scenes, degradation, PPM and checkpoint I/O
//! - [`metrics`]: PSNR, SSIM, MS-SSIM, Fréchet distance

pub mod colearn;
pub mod data;
pub mod diffusion;
mod error;
pub mod metrics;
pub mod nn;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{AdamState, Fill, Graph, Rng, Tensor, Var};

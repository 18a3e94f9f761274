//! KAN-augmented conditional diffusion for low-light image enhancement.
//!
//! A from-scratch pipeline: a reverse-mode autodiff tensor core, B-spline
//! KAN layers inside a conditional U-Net denoiser, DDPM training with a
//! two-phase schedule (heteroscedastic uncertainty, then frozen-weight
//! fine-tuning with a frequency-domain perception loss), plus PNG IO,
//! PSNR/SSIM metrics and a train/enhance/eval/verify CLI.

pub mod error;
pub mod rng;
pub mod tensor;

pub mod kan;

pub mod diffusion;
pub mod frequency;
pub mod unet;

pub mod imaging;
pub mod metrics;

pub mod checkpoint;
pub mod config;

pub mod commands;
pub mod verify;

pub use error::{Error, Result};
pub use tensor::{Scalar, Tape, Tensor};

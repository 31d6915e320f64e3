//! faor — fast arbitrary-scale super-resolution for 360° (equirectangular)
//! images.
//!
//! The pipeline encodes a low-resolution ERP image into a latent grid with a
//! sphere-aware block stack, resamples the latents at arbitrary-scale target
//! coordinates with geodesic (spherical-linear) interpolation, and decodes
//! each target pixel once with a coordinate-conditioned implicit function.
//! Classical bilinear/bicubic resamplers, latitude-weighted quality metrics
//! (WS-PSNR / WS-SSIM), a self-supervised training loop, and image/checkpoint
//! I/O round out the toolkit.

pub mod checkpoint;
pub mod config;
pub mod error;
pub mod geometry;
pub mod io;
pub mod metrics;
pub mod model;
pub mod resample;
pub mod scalar;
pub mod synthetic;
pub mod tensor;
pub mod train;

pub use error::{FaorError, Result};

//! Diverse unsupervised image denoising.
//!
//! A fully convolutional VAE is trained on noisy images only. Its decoder
//! predicts a clean signal and the reconstruction term of the loss is the
//! log-likelihood of the observed pixels under an explicit pixel-wise noise
//! model. Sampling the approximate posterior then yields many plausible clean
//! images, which are fused into MMSE or MAP estimates or fed to downstream
//! segmentation.
//!
//! Module map:
//!
//! * [`data`]: raster loading, patch extraction, D4 augmentation, synthetic corruption
//! * [`noise`]: Gaussian, signal-dependent GMM and co-learned linear-variance noise models
//! * [`nn`]: the small tensor/convolution toolkit the VAE is built on
//! * [`vae`]: architecture, encoder/decoder, loss and checkpoints
//! * [`train`]: optimization loop with plateau scheduling and early stopping
//! * [`inference`]: posterior sampling, MMSE, windowed mean-shift MAP, clustering
//! * [`eval`]: PSNR, diversity metric and the beta / noise-level studies
//! * [`seg`]: local-threshold segmentation and Consensus(Avg) label fusion

pub mod data;
pub mod error;
pub mod eval;
pub mod inference;
pub mod io;
pub mod nn;
pub mod noise;
pub mod plot;
pub mod rng;
pub mod seg;
pub mod synthetic;
pub mod train;
pub mod vae;

pub use error::{Error, Result};

/// Single-channel raster in row-major (height, width) order.
pub type Image = ndarray::Array2<f64>;

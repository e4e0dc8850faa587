//! Minimal CPU network toolkit: CNHW tensors, im2col convolutions with
//! hand-written backward passes, and the Adam optimizer.
//!
//! Everything is generic over [`Real`] so the same network can train in
//! `f32` and be gradient-checked in `f64`.

mod adam;
mod conv;
mod layers;
mod real;
mod tensor;

pub use adam::{clip_global_norm, Adam, AdamConfig};
pub use conv::{Conv2d, Padding};
pub use layers::{activation_pattern, Layer, LayerCache, Sequential};
pub use real::Real;
pub use tensor::Tensor;

//! Differentiable layers of the U-Net, recorded onto a [`Tape`](crate::Tape).
//!
//! All image tensors are `N×C×H×W`. Kernels split work across the batch axis
//! with rayon; per-sample partial gradients are reduced in batch order, so
//! results never depend on the number of worker threads.

mod activation;
mod concat;
mod conv;
mod pool;
mod upsample;

pub use activation::stable_sigmoid;
pub use conv::{ConvSpec, Padding};

//! Event-guided single-image dehazing with a conditional latent diffusion
//! model: event I/O and simulation, haze synthesis, temporal pyramid
//! encoding, a small reverse-mode autodiff engine, diffusion samplers, and a
//! toy end-to-end training and evaluation pipeline.

// `!(x >= 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod diffusion;
pub mod error;
pub mod events;
pub mod exec;
pub mod haze;
pub mod image;
pub mod pipeline;
pub mod rng;
pub mod sim;
pub mod tensor;
pub mod tpr;

pub use error::{Error, Result};
pub use exec::ExecMode;
pub use image::Image;
pub use rng::Rng;
pub use tensor::Tensor;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

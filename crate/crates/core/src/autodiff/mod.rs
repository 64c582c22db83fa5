//! Minimal reverse-mode differentiation: the layers the denoiser and event
//! encoder need, parameter storage, AdamW, gradient checking, checkpoints.

mod adamw;
mod checkpoint;
mod gradcheck;
mod graph;
pub mod nn;
mod param;

pub use adamw::{AdamWConfig, OptimizerState};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_HEADER, MANIFEST_FILE};
pub use gradcheck::{grad_check, CheckInput, GradCheckReport};
pub use graph::{Gradients, Graph, Var};
pub use param::{GradBuffer, Param, ParamId, ParamStore};

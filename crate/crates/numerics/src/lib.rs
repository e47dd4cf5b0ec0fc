//! Minimal deterministic tensor engine for the multi-view enhancer.
//!
//! Feature maps are stored channel-first (`C×H×W`, batch size one per graph);
//! vectors are rank-1 tensors. Every forward operation on a [`Graph`] records
//! the information its backward pass needs, and [`Graph::backward`] walks the
//! tape in reverse creation order, so gradient accumulation is bit-reproducible.

mod adam;
mod checkpoint;
mod error;
mod gradcheck;
mod graph;
mod kernels;
mod param;
mod real;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use checkpoint::{read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use error::{Error, Result};
pub use gradcheck::{grad_check, GradCheckConfig, GradCheckReport, MAX_REFINEMENTS};
pub use graph::{Activation, Gradients, Graph, Var};
pub use kernels::{conv2d_output_size, resize_bilinear};
pub use param::{he_init, ParamSet, Parameter};
pub use real::Real;
pub use tensor::Tensor;

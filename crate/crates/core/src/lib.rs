//! Geometry-consistent multi-view enhancement of degraded rendered views.
//!
//! A degraded render of a novel view is improved with detail from nearby
//! ground-truth training images: neighbors are picked by camera distance,
//! reprojected through depth, refined with a learned flow, weighted by
//! pixel and camera attention, max-pooled and decoded by a small
//! encoder-decoder. [`scene`] provides the synthetic posed-image harness.

pub mod error;
pub mod eval;
pub mod geometry;
pub mod gradsuite;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod scene;
pub mod train;

pub use error::{Error, Result};
pub use eval::{evaluate_scene, noise_sweep, MetricsReport};
pub use pipeline::{enhance_view, ModelConfig};
pub use train::{fit, train_step, Budget, TrainConfig};

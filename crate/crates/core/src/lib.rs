//! Dual-stream boundary-guided segmentation: model, losses, metrics,
//! synthetic data, checkpoints and the training harness behind `cto`.

// `!(x > 0.0)` is deliberate: it rejects NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod boundary;
pub mod checkpoint;
pub mod cnn;
pub mod config;
pub mod data;
pub mod error;
pub mod harness;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod optim;
pub mod stitch;
pub mod train;

//! Dense CPU tensors with reverse-mode differentiation.
//!
//! Every op that reads a gradient-tracking tensor records a node holding
//! its inputs and a backward closure. [`Tensor::backward`] walks the
//! record in reverse topological order, accumulates gradients on leaves
//! and drops the record.
//!
//! The engine is generic over [`Element`]; models train in `f32` and are
//! verified in `f64` with [`gradcheck::finite_diff_check`].
//!
//! ```
//! use cto_tensor::Tensor;
//!
//! let x = Tensor::<f64>::new(vec![1.0, -2.0, 3.0], &[3]).unwrap().with_grad();
//! let loss = x.mul(&x).unwrap().sum_all();
//! loss.backward().unwrap();
//! assert_eq!(x.grad().unwrap(), vec![2.0, -4.0, 6.0]);
//! ```

// `!(err < tol)` is deliberate: a NaN error must count as a failure.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod element;
pub mod error;
pub mod gradcheck;
pub mod ops;
pub mod params;
pub mod profile;
pub mod shape;
pub mod tensor;

pub use element::{DType, Element};
pub use error::{Result, TensorError};
pub use ops::{
    batch_norm, concat, concat_channels, conv2d, matmul, pointwise, softmax_lastdim,
    upsample_bilinear, BnMode, Operand, PadMode, Pointwise, RunningStats, BN_EPS, BN_MOMENTUM,
};
pub use params::{ParamId, ParamStore, Parameter, StatsId};
pub use shape::Shape;
pub use tensor::{is_grad_enabled, no_grad, ComputationRecord, RecordEntry, Tensor};

//! Spiking neural network training with temporal contrastive objectives.

// `!(x > 0.0)` is used on purpose so that NaN is rejected; the reference
// loops index explicitly to mirror the formulas.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod autograd;
pub mod cli;
pub mod data;
pub mod error;
pub mod eval;
pub mod losses;
pub mod oracle;
pub mod plot;
pub mod rng;
pub mod snn;
pub mod tensor;
pub mod train;
pub mod verify;

pub use error::{Error, Result};
pub use tensor::Tensor;

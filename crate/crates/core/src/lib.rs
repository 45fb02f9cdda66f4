// `!(x > 0.0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod checkpoint;
pub mod checks;
pub mod config;
pub mod error;
pub mod evaluation;
pub mod formats;
pub mod gradcheck;
pub mod inference;
pub mod losses;
pub mod metrics;
pub mod models;
pub mod optim;
pub mod seeds;
pub mod synthdata;
pub mod tensor;
pub mod trainer;

pub use autodiff::{Activation, BatchStats, Conv2dSpec, Gradients, Tape, Var};
pub use error::{FormatError, Result, TensorError};
pub use tensor::{DType, Real, Tensor};

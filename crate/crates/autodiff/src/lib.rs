//! Dense row-major tensors with recorded-graph reverse-mode differentiation.
//!
//! Operations on tracked tensors record a graph node; [`Tensor::backward`]
//! on a rank-0 result sweeps it in reverse topological order and returns a
//! [`GradientMap`] keyed by leaf identity. Broadcasting is limited to rank-0
//! operands; anything wider goes through an explicit op such as
//! [`Tensor::repeat_rows`] or [`Tensor::add_channel_bias`].

pub mod check;
mod error;
mod grad;
pub mod ops;
mod real;
mod tensor;

pub use error::{Result, TensorError};
pub use grad::GradientMap;
pub use ops::elementwise::{elementwise_binary, elementwise_unary, BinaryKind, UnaryKind};
pub use ops::linalg::cholesky_factor;
pub use ops::reduce::{reduce, ReduceKind};
pub use real::Real;
pub use tensor::{Tensor, TensorId};

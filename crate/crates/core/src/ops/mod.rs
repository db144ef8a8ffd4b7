//! Differentiable tensor operations. Most are methods on [`Var`](crate::autograd::Var).

mod conv;
mod elementwise;
mod gemm;
mod linear;
mod loss;
mod norm;
mod resize;
mod shape;

pub use conv::{conv2d, conv2d_tensor, ConvSpec};
pub use elementwise::{gelu_scalar, sigmoid_scalar, silu_scalar, softplus_scalar};
pub use norm::softmax_tensor;
pub use resize::resize_bilinear_tensor;
pub use shape::{concat, concat_channels};

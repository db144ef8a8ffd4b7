//! Building blocks of a wavelet-guided, state-space segmentation decoder.
//!
//! The crate carries its own small tensor engine ([`tensor`], [`autograd`],
//! [`ops`]); every block is differentiable and checkable against finite
//! differences.

pub mod autograd;
pub mod checkpoint;
pub mod decoder;
pub mod error;
pub mod gradcheck;
pub mod hpg;
pub mod ops;
pub mod optim;
pub mod params;
pub mod rng;
pub mod sda;
pub mod ssm;
pub mod tensor;
pub mod wavelet;

pub use autograd::{Gradients, Tape, Var};
pub use error::{Error, Result};
pub use tensor::Tensor;

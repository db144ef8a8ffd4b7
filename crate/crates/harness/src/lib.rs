//! Desk-scale experiment harness for the waveseg decoder: synthetic corpus,
//! training and evaluation, ablations and scan benchmarks.

pub mod ablate;
pub mod bench;
pub mod config;
pub mod corpus;
pub mod error;
pub mod metrics;
pub mod train;

pub use error::{HarnessError, Result};

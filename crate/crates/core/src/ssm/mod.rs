//! Diagonal state-space models: discretization, linear-time scans, the
//! input-selective parameterization, and a two-dimensional scan block.

mod discretize;
mod scan;
mod selective;
mod streaming;
mod vssm;

pub use discretize::{
    zoh_discretize, zoh_gain_exact, zoh_gain_grads, zoh_gain_grads_from, zoh_gain_series,
    zoh_terms, SERIES_THRESHOLD,
};
pub use scan::{
    combine, inclusive_scan, parallel_scan, readout, scan_states, sequential_scan, DiscreteSsm,
    ScanMode,
};
pub use selective::{
    discretize_tokens, selective_params, selective_scan, SelectiveTerms, SsmParams,
};
pub use streaming::{streaming_selective_scan, TokenSsm};
pub use vssm::{VssmConfig, VssmParams};

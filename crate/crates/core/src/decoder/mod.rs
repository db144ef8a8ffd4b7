//! Segmentation network: a small strided encoder and the wavelet-guided
//! decoder (projection, prior modulation, aggregation, refinement, head).
//!
//! Parameter names are grouped by prefix: `encoder.*`, `decoder.*`,
//! `hpg.*`, `sda.l2.*`, `sda.con.*` and `head.*`.

mod config;
mod encoder;
mod model;

pub use config::{DecoderConfig, SdaMode};
pub use encoder::{FeaturePyramid, ToyEncoder};
pub use model::{Aligned, Conv, SdaSite, WaveSeg, META_ENTRY};

//! Spectrum decomposition attention: a frequency-split mixer, a local
//! perception block and a feed-forward network with residual wiring.

mod block;
mod mixer;
mod rep;

pub use block::{FeedForward, LocalPerception, SdaBlock, SdaConfig, SdaStages, LN_EPS};
pub use mixer::{HighPath, MixerConfig, MixerKind, WaveletMixer};
pub use rep::{merge_kernels, RepBlock, RepForm};

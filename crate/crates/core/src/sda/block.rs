//! The full attention block with two pre-norm residual stages:
//!
//! ```text
//! y_m = WM(LN(y)) + y
//! p   = LPB(y_m)
//! O   = FFN(LN(p)) + p
//! ```

use crate::autograd::Var;
use crate::error::{dim_err, Error, Result};
use crate::ops::ConvSpec;
use crate::params::{Bound, ParamId, ParamStore};
use crate::sda::mixer::{MixerConfig, MixerKind, WaveletMixer};
use crate::ssm::VssmConfig;
use crate::tensor::Tensor;

pub const LN_EPS: f64 = 1e-6;

/// Depthwise 3×3, GELU, pointwise 1×1, added to the input.
#[derive(Clone, Debug)]
pub struct LocalPerception {
    pub channels: usize,
    pub dw_weight: ParamId,
    pub dw_bias: ParamId,
    pub pw_weight: ParamId,
    pub pw_bias: ParamId,
}

impl LocalPerception {
    pub fn register(store: &mut ParamStore, prefix: &str, channels: usize) -> Self {
        let c = channels;
        Self {
            channels,
            dw_weight: store.fan_in(format!("{prefix}.dw.weight"), &[c, 1, 3, 3], 9),
            dw_bias: store.zeros(format!("{prefix}.dw.bias"), &[c]),
            pw_weight: store.fan_in(format!("{prefix}.pw.weight"), &[c, c, 1, 1], c),
            pw_bias: store.zeros(format!("{prefix}.pw.bias"), &[c]),
        }
    }

    pub fn forward<'t>(&self, p: &Bound<'t>, y: Var<'t>) -> Result<Var<'t>> {
        let c = self.channels;
        let local = y
            .conv2d(
                p.get(self.dw_weight),
                Some(p.get(self.dw_bias)),
                ConvSpec::same(3, 3).groups(c),
            )?
            .gelu()?
            .conv2d(
                p.get(self.pw_weight),
                Some(p.get(self.pw_bias)),
                ConvSpec::same(1, 1),
            )?;
        y.add(local)
    }

    pub fn make_identity(&self, store: &mut ParamStore) -> Result<()> {
        let c = self.channels;
        store.set(self.pw_weight, Tensor::zeros(&[c, c, 1, 1]))?;
        store.set(self.pw_bias, Tensor::zeros(&[c]))
    }
}

/// Pointwise `c → e·c`, GELU, `e·c → c`.
#[derive(Clone, Debug)]
pub struct FeedForward {
    pub channels: usize,
    pub hidden: usize,
    pub fc1_weight: ParamId,
    pub fc1_bias: ParamId,
    pub fc2_weight: ParamId,
    pub fc2_bias: ParamId,
}

impl FeedForward {
    pub fn register(
        store: &mut ParamStore,
        prefix: &str,
        channels: usize,
        expansion: usize,
    ) -> Self {
        let (c, h) = (channels, channels * expansion);
        Self {
            channels,
            hidden: h,
            fc1_weight: store.fan_in(format!("{prefix}.fc1.weight"), &[h, c, 1, 1], c),
            fc1_bias: store.zeros(format!("{prefix}.fc1.bias"), &[h]),
            fc2_weight: store.fan_in(format!("{prefix}.fc2.weight"), &[c, h, 1, 1], h),
            fc2_bias: store.zeros(format!("{prefix}.fc2.bias"), &[c]),
        }
    }

    pub fn forward<'t>(&self, p: &Bound<'t>, y: Var<'t>) -> Result<Var<'t>> {
        y.conv2d(
            p.get(self.fc1_weight),
            Some(p.get(self.fc1_bias)),
            ConvSpec::same(1, 1),
        )?
        .gelu()?
        .conv2d(
            p.get(self.fc2_weight),
            Some(p.get(self.fc2_bias)),
            ConvSpec::same(1, 1),
        )
    }

    pub fn make_zero(&self, store: &mut ParamStore) -> Result<()> {
        store.set(
            self.fc2_weight,
            Tensor::zeros(&[self.channels, self.hidden, 1, 1]),
        )?;
        store.set(self.fc2_bias, Tensor::zeros(&[self.channels]))
    }
}

#[derive(Clone, Debug)]
pub struct SdaConfig {
    pub channels: usize,
    pub ffn_expansion: usize,
    pub vssm: VssmConfig,
    /// Separate scan blocks for LH, HL, HH instead of one shared block.
    pub per_band: bool,
    pub mixer: MixerKind,
    /// Inference mode: Rep paths hold merged kernels.
    pub merged: bool,
}

impl SdaConfig {
    pub fn new(channels: usize) -> Self {
        Self {
            channels,
            ffn_expansion: 4,
            vssm: VssmConfig::default(),
            per_band: false,
            mixer: MixerKind::Wavelet,
            merged: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || !self.channels.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "attention block channels must be even and positive, got {}",
                self.channels
            )));
        }
        if self.ffn_expansion == 0 {
            return Err(Error::Config(
                "feed-forward expansion must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct SdaBlock {
    pub cfg: SdaConfig,
    pub ln1_gain: ParamId,
    pub ln1_shift: ParamId,
    pub mixer: WaveletMixer,
    pub lpb: LocalPerception,
    pub ln2_gain: ParamId,
    pub ln2_shift: ParamId,
    pub ffn: FeedForward,
}

/// Intermediate values of one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct SdaStages<'t> {
    /// `WM(LN(y)) + y`.
    pub mixed: Var<'t>,
    /// `LPB(mixed)`.
    pub local: Var<'t>,
    /// Block output.
    pub out: Var<'t>,
}

impl SdaBlock {
    pub fn register(store: &mut ParamStore, prefix: &str, cfg: SdaConfig) -> Result<Self> {
        cfg.validate()?;
        let c = cfg.channels;
        let mixer_cfg = MixerConfig {
            kind: cfg.mixer,
            vssm: cfg.vssm.clone(),
            per_band: cfg.per_band,
            merged: cfg.merged,
        };
        Ok(Self {
            ln1_gain: store.full(format!("{prefix}.ln1.gain"), &[c], 1.0),
            ln1_shift: store.zeros(format!("{prefix}.ln1.shift"), &[c]),
            mixer: WaveletMixer::register(store, &format!("{prefix}.wm"), c, &mixer_cfg)?,
            lpb: LocalPerception::register(store, &format!("{prefix}.lpb"), c),
            ln2_gain: store.full(format!("{prefix}.ln2.gain"), &[c], 1.0),
            ln2_shift: store.zeros(format!("{prefix}.ln2.shift"), &[c]),
            ffn: FeedForward::register(store, &format!("{prefix}.ffn"), c, cfg.ffn_expansion),
            cfg,
        })
    }

    pub fn forward_stages<'t>(&self, p: &Bound<'t>, y: Var<'t>) -> Result<SdaStages<'t>> {
        let c = y.dims4()?.1;
        if c != self.cfg.channels {
            return Err(dim_err!(
                "attention block built for {} channels, got {c}",
                self.cfg.channels
            ));
        }
        let normed = y.layer_norm(p.get(self.ln1_gain), p.get(self.ln1_shift), LN_EPS)?;
        let mixed = self.mixer.forward(p, normed)?.add(y)?;
        let local = self.lpb.forward(p, mixed)?;
        let normed = local.layer_norm(p.get(self.ln2_gain), p.get(self.ln2_shift), LN_EPS)?;
        let out = self.ffn.forward(p, normed)?.add(local)?;
        Ok(SdaStages { mixed, local, out })
    }

    pub fn forward<'t>(&self, p: &Bound<'t>, y: Var<'t>) -> Result<Var<'t>> {
        Ok(self.forward_stages(p, y)?.out)
    }

    /// Zeroes the mixer, local and feed-forward residual branches so the
    /// block is the identity.
    pub fn make_identity(&self, store: &mut ParamStore) -> Result<()> {
        self.mixer.make_zero(store)?;
        self.lpb.make_identity(store)?;
        self.ffn.make_zero(store)
    }
}

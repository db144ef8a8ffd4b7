//! High-frequency prior: a learned map built from the detail sub-bands of
//! the downsized input image, used to gate decoder features.
//!
//! ```text
//! x          = resize(image, H/8, W/8)
//! LL,LH,HL,HH = dwt(x)
//! x^H        = resize(mlp([conv1x3(LH), conv3x1(HL), conv3x3(HH)]), H/8, W/8)
//! f^en       = f ⊙ softmax_c(x^H) + f
//! ```

use crate::autograd::Var;
use crate::error::{dim_err, Result};
use crate::ops::{concat_channels, ConvSpec};
use crate::params::{Bound, ParamId, ParamStore};
use crate::tensor::Tensor;
use crate::wavelet::dwt2d_var;

const IMAGE_CHANNELS: usize = 3;

#[derive(Clone, Debug)]
pub struct HpgParams {
    pub out_channels: usize,
    pub lh_weight: ParamId,
    pub lh_bias: ParamId,
    pub hl_weight: ParamId,
    pub hl_bias: ParamId,
    pub hh_weight: ParamId,
    pub hh_bias: ParamId,
    pub mlp1_weight: ParamId,
    pub mlp1_bias: ParamId,
    pub mlp2_weight: ParamId,
    pub mlp2_bias: ParamId,
}

/// The selection outputs of one prior evaluation, before the MLP.
#[derive(Clone, Copy, Debug)]
pub struct Selection<'t> {
    pub lh: Var<'t>,
    pub hl: Var<'t>,
    pub hh: Var<'t>,
}

impl HpgParams {
    pub fn register(store: &mut ParamStore, prefix: &str, out_channels: usize) -> Self {
        let c = IMAGE_CHANNELS;
        let hidden = 2 * 3 * c;
        Self {
            out_channels,
            lh_weight: store.fan_in(format!("{prefix}.lh.weight"), &[c, c, 1, 3], 3 * c),
            lh_bias: store.zeros(format!("{prefix}.lh.bias"), &[c]),
            hl_weight: store.fan_in(format!("{prefix}.hl.weight"), &[c, c, 3, 1], 3 * c),
            hl_bias: store.zeros(format!("{prefix}.hl.bias"), &[c]),
            hh_weight: store.fan_in(format!("{prefix}.hh.weight"), &[c, c, 3, 3], 9 * c),
            hh_bias: store.zeros(format!("{prefix}.hh.bias"), &[c]),
            mlp1_weight: store.fan_in(
                format!("{prefix}.mlp1.weight"),
                &[hidden, 3 * c, 1, 1],
                3 * c,
            ),
            mlp1_bias: store.zeros(format!("{prefix}.mlp1.bias"), &[hidden]),
            mlp2_weight: store.fan_in(
                format!("{prefix}.mlp2.weight"),
                &[out_channels, hidden, 1, 1],
                hidden,
            ),
            mlp2_bias: store.zeros(format!("{prefix}.mlp2.bias"), &[out_channels]),
        }
    }

    /// Sets each selection filter to pass its band through unchanged.
    pub fn set_identity_selection(&self, store: &mut ParamStore) -> Result<()> {
        let c = IMAGE_CHANNELS;
        for (w, b, kh, kw) in [
            (self.lh_weight, self.lh_bias, 1, 3),
            (self.hl_weight, self.hl_bias, 3, 1),
            (self.hh_weight, self.hh_bias, 3, 3),
        ] {
            let center = (kh / 2) * kw + kw / 2;
            let k = Tensor::from_fn(&[c, c, kh, kw], |i| {
                let (o, rest) = (i / (c * kh * kw), i % (c * kh * kw));
                let (ic, tap) = (rest / (kh * kw), rest % (kh * kw));
                if o == ic && tap == center {
                    1.0
                } else {
                    0.0
                }
            });
            store.set(w, k)?;
            store.set(b, Tensor::zeros(&[c]))?;
        }
        Ok(())
    }

    /// Directional filtering of the three detail bands of the downsized image.
    pub fn select<'t>(&self, p: &Bound<'t>, image: Var<'t>) -> Result<Selection<'t>> {
        let (_, c, h, w) = image.dims4()?;
        if c != IMAGE_CHANNELS {
            return Err(dim_err!(
                "prior expects a {IMAGE_CHANNELS}-channel image, got {c}"
            ));
        }
        if h % 16 != 0 || w % 16 != 0 || h == 0 || w == 0 {
            return Err(dim_err!("prior needs extents divisible by 16, got {h}x{w}"));
        }
        let small = image.resize_bilinear(h / 8, w / 8)?;
        let bands = dwt2d_var(small)?;
        Ok(Selection {
            lh: bands.lh.conv2d(
                p.get(self.lh_weight),
                Some(p.get(self.lh_bias)),
                ConvSpec::same(1, 3),
            )?,
            hl: bands.hl.conv2d(
                p.get(self.hl_weight),
                Some(p.get(self.hl_bias)),
                ConvSpec::same(3, 1),
            )?,
            hh: bands.hh.conv2d(
                p.get(self.hh_weight),
                Some(p.get(self.hh_bias)),
                ConvSpec::same(3, 3),
            )?,
        })
    }

    /// The prior `x^H`, shape `(b, out_channels, H/8, W/8)`.
    pub fn build_prior<'t>(&self, p: &Bound<'t>, image: Var<'t>) -> Result<Var<'t>> {
        let (_, _, h, w) = image.dims4()?;
        let s = self.select(p, image)?;
        concat_channels(&[s.lh, s.hl, s.hh])?
            .conv2d(
                p.get(self.mlp1_weight),
                Some(p.get(self.mlp1_bias)),
                ConvSpec::same(1, 1),
            )?
            .gelu()?
            .conv2d(
                p.get(self.mlp2_weight),
                Some(p.get(self.mlp2_bias)),
                ConvSpec::same(1, 1),
            )?
            .resize_bilinear(h / 8, w / 8)
    }
}

/// `f ⊙ softmax over channels of prior + f`.
pub fn modulate<'t>(f: Var<'t>, prior: Var<'t>) -> Result<Var<'t>> {
    let (fs, ps) = (f.shape(), prior.shape());
    if fs != ps || fs.len() != 4 {
        return Err(dim_err!(
            "modulation needs equal 4-D shapes, got {fs:?} and {ps:?}"
        ));
    }
    f.mul(prior.softmax_axis(1)?)?.add(f)
}

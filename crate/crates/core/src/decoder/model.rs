use std::path::Path;

use crate::autograd::Var;
use crate::checkpoint;
use crate::decoder::config::{DecoderConfig, SdaMode};
use crate::decoder::encoder::{FeaturePyramid, ToyEncoder};
use crate::error::{dim_err, Error, Result};
use crate::hpg::{modulate, HpgParams};
use crate::ops::{concat_channels, ConvSpec};
use crate::params::{Bound, ParamId, ParamStore};
use crate::sda::{RepBlock, SdaBlock, SdaConfig};
use crate::tensor::Tensor;

/// Checkpoint entry holding the architecture record.
pub const META_ENTRY: &str = "meta.arch";

#[derive(Clone, Debug)]
pub struct Conv {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Conv {
    fn register(store: &mut ParamStore, prefix: &str, cout: usize, cin: usize, k: usize) -> Self {
        Self {
            weight: store.fan_in(format!("{prefix}.weight"), &[cout, cin, k, k], cin * k * k),
            bias: store.zeros(format!("{prefix}.bias"), &[cout]),
        }
    }

    fn forward<'t>(&self, p: &Bound<'t>, x: Var<'t>) -> Result<Var<'t>> {
        let k = p.get(self.weight).shape()[2];
        x.conv2d(
            p.get(self.weight),
            Some(p.get(self.bias)),
            ConvSpec::same(k, k),
        )
    }
}

/// Occupant of an attention-block site.
#[derive(Clone, Debug)]
pub enum SdaSite {
    Block(Box<SdaBlock>),
    Conv(Conv),
    Skip,
}

impl SdaSite {
    fn register(store: &mut ParamStore, prefix: &str, cfg: &DecoderConfig) -> Result<Self> {
        Ok(match cfg.sda {
            SdaMode::Off => Self::Skip,
            SdaMode::Conv => Self::Conv(Conv::register(
                store,
                &format!("{prefix}.conv"),
                cfg.c_dec,
                cfg.c_dec,
                3,
            )),
            SdaMode::On => {
                let sc = SdaConfig {
                    channels: cfg.c_dec,
                    ffn_expansion: cfg.ffn_expansion,
                    vssm: cfg.vssm.clone(),
                    per_band: cfg.per_band,
                    mixer: cfg.mixer,
                    merged: cfg.merged,
                };
                Self::Block(Box::new(SdaBlock::register(store, prefix, sc)?))
            }
        })
    }

    pub fn forward<'t>(&self, p: &Bound<'t>, x: Var<'t>) -> Result<Var<'t>> {
        match self {
            Self::Skip => Ok(x),
            Self::Conv(c) => c.forward(p, x)?.add(x),
            Self::Block(b) => b.forward(p, x),
        }
    }

    pub fn rep(&self) -> Option<&RepBlock> {
        match self {
            Self::Block(b) => b.mixer.rep.as_ref(),
            _ => None,
        }
    }

    /// Makes the site the identity map.
    pub fn make_identity(&self, store: &mut ParamStore) -> Result<()> {
        match self {
            Self::Skip => Ok(()),
            Self::Conv(c) => {
                let shape = store.get(c.weight).shape().to_vec();
                store.set(c.weight, Tensor::zeros(&shape))?;
                let n = store.get(c.bias).numel();
                store.set(c.bias, Tensor::zeros(&[n]))
            }
            Self::Block(b) => b.make_identity(store),
        }
    }
}

/// Stride-8 features after projection and alignment.
#[derive(Clone, Copy, Debug)]
pub struct Aligned<'t> {
    pub f2: Var<'t>,
    pub f3: Var<'t>,
    pub f4: Var<'t>,
}

/// Full encoder-decoder segmentation network.
#[derive(Clone, Debug)]
pub struct WaveSeg {
    pub cfg: DecoderConfig,
    pub encoder: ToyEncoder,
    pub proj2: Conv,
    pub proj3: Conv,
    pub proj4: Conv,
    pub sda_l2: SdaSite,
    pub hpg: Option<HpgParams>,
    pub agg_conv: Conv,
    pub agg_fuse: Conv,
    pub sda_con: SdaSite,
    pub refine_conv: Conv,
    pub head_fuse: Conv,
    pub head_cls: Conv,
}

impl WaveSeg {
    /// Registers every parameter in a fresh store initialized from `seed`.
    pub fn new(cfg: DecoderConfig, seed: u64) -> Result<(Self, ParamStore)> {
        let mut store = ParamStore::new(seed);
        let model = Self::register(&mut store, cfg)?;
        Ok((model, store))
    }

    pub fn register(store: &mut ParamStore, cfg: DecoderConfig) -> Result<Self> {
        cfg.validate()?;
        let c = cfg.c_dec;
        let e = cfg.encoder_channels;
        let encoder = ToyEncoder::register(store, "encoder", e);
        let proj2 = Conv::register(store, "decoder.proj2", c, e[1], 1);
        let proj3 = Conv::register(store, "decoder.proj3", c, e[2], 1);
        let proj4 = Conv::register(store, "decoder.proj4", c, e[3], 1);
        let sda_l2 = SdaSite::register(store, "sda.l2", &cfg)?;
        let hpg = cfg.hpg.then(|| HpgParams::register(store, "hpg", c));
        let agg_conv = Conv::register(store, "decoder.agg.conv", c, 3 * c, 3);
        let f = cfg.unshuffle;
        let agg_fuse = Conv::register(store, "decoder.agg.fuse", c, f * f * c, 1);
        let sda_con = SdaSite::register(store, "sda.con", &cfg)?;
        let refine_conv = Conv::register(store, "decoder.refine.conv", c, c, 3);
        let head_fuse = Conv::register(store, "head.fuse", c, 3 * c, 1);
        let head_cls = Conv::register(store, "head.cls", cfg.num_classes, c, 1);
        Ok(Self {
            cfg,
            encoder,
            proj2,
            proj3,
            proj4,
            sda_l2,
            hpg,
            agg_conv,
            agg_fuse,
            sda_con,
            refine_conv,
            head_fuse,
            head_cls,
        })
    }

    pub fn encode<'t>(&self, p: &Bound<'t>, image: Var<'t>) -> Result<FeaturePyramid<'t>> {
        self.encoder.forward(p, image)
    }

    /// `f2 = pool(SDA(Linear(F2)))`, `f3 = Linear(F3)`, `f4 = Up(Linear(F4))`.
    pub fn project_and_align<'t>(
        &self,
        p: &Bound<'t>,
        pyr: &FeaturePyramid<'t>,
    ) -> Result<Aligned<'t>> {
        let (_, _, h3, w3) = pyr.f3.dims4()?;
        let l2 = self.proj2.forward(p, pyr.f2)?;
        let f2 = self.sda_l2.forward(p, l2)?.avg_pool2()?;
        let f3 = self.proj3.forward(p, pyr.f3)?.resize_bilinear(h3, w3)?;
        let f4 = self.proj4.forward(p, pyr.f4)?.resize_bilinear(h3, w3)?;
        for f in [f2, f4] {
            if f.shape() != f3.shape() {
                return Err(dim_err!(
                    "aligned features disagree: {:?} vs {:?}",
                    f.shape(),
                    f3.shape()
                ));
            }
        }
        Ok(Aligned { f2, f3, f4 })
    }

    /// Concatenate, 3×3 conv, unshuffle to stride 16, 1×1 conv.
    pub fn aggregate<'t>(&self, p: &Bound<'t>, f: &Aligned<'t>) -> Result<Var<'t>> {
        let x = concat_channels(&[f.f2, f.f3, f.f4])?;
        let x = self
            .agg_conv
            .forward(p, x)?
            .pixel_unshuffle(self.cfg.unshuffle)?;
        self.agg_fuse.forward(p, x)
    }

    /// Shared refinement branch at stride 8, added to every level.
    pub fn refine<'t>(
        &self,
        p: &Bound<'t>,
        f_con: Var<'t>,
        f: &Aligned<'t>,
    ) -> Result<(Var<'t>, Aligned<'t>)> {
        let (_, _, h, w) = f.f2.dims4()?;
        let fa = self.sda_con.forward(p, f_con)?.resize_bilinear(h, w)?;
        let fa = self.refine_conv.forward(p, fa)?;
        Ok((
            fa,
            Aligned {
                f2: fa.add(f.f2)?,
                f3: fa.add(f.f3)?,
                f4: fa.add(f.f4)?,
            },
        ))
    }

    /// Concatenate, 1×1, GELU, 1×1 to classes, resize to the image size.
    pub fn seg_head<'t>(
        &self,
        p: &Bound<'t>,
        f: &Aligned<'t>,
        out_h: usize,
        out_w: usize,
    ) -> Result<Var<'t>> {
        let x = concat_channels(&[f.f2, f.f3, f.f4])?;
        let x = self.head_fuse.forward(p, x)?.gelu()?;
        self.head_cls.forward(p, x)?.resize_bilinear(out_h, out_w)
    }

    /// Per-pixel class logits `(b, num_classes, H, W)`.
    pub fn forward<'t>(&self, p: &Bound<'t>, image: Var<'t>) -> Result<Var<'t>> {
        let (_, _, h, w) = image.dims4()?;
        let pyr = self.encode(p, image)?;
        let mut f = self.project_and_align(p, &pyr)?;
        if let Some(hpg) = &self.hpg {
            let prior = hpg.build_prior(p, image)?;
            f = Aligned {
                f2: modulate(f.f2, prior)?,
                f3: modulate(f.f3, prior)?,
                f4: modulate(f.f4, prior)?,
            };
        }
        let f_con = self.aggregate(p, &f)?;
        let (_, fa) = self.refine(p, f_con, &f)?;
        self.seg_head(p, &fa, h, w)
    }

    /// Logits without recording gradients.
    pub fn infer(&self, store: &ParamStore, image: &Tensor) -> Result<Tensor> {
        let tape = crate::autograd::Tape::new();
        let p = store.bind_frozen(&tape);
        Ok(self.forward(&p, tape.constant(image.clone()))?.value())
    }

    fn rep_pairs<'a>(&'a self, other: &'a WaveSeg) -> Vec<(&'a RepBlock, &'a RepBlock)> {
        [
            (&self.sda_l2, &other.sda_l2),
            (&self.sda_con, &other.sda_con),
        ]
        .into_iter()
        .filter_map(|(a, b)| Some((a.rep()?, b.rep()?)))
        .collect()
    }

    /// Inference form: every Rep path folded into a single 3×3 kernel.
    pub fn export_merged(&self, store: &ParamStore) -> Result<(WaveSeg, ParamStore)> {
        let cfg = DecoderConfig {
            merged: true,
            ..self.cfg.clone()
        };
        let (merged, mut out) = WaveSeg::new(cfg, store.seed())?;
        let shared: Vec<_> = out
            .entries()
            .iter()
            .filter_map(|e| Some((out.id(&e.name)?, store.by_name(&e.name)?.clone())))
            .collect();
        for (id, value) in shared {
            out.set(id, value)?;
        }
        for (dst, src) in merged.rep_pairs(self) {
            dst.transfer(src, store, &mut out)?;
        }
        Ok((merged, out))
    }

    pub fn save(&self, store: &ParamStore, path: &Path) -> Result<()> {
        let mut entries = store.to_named();
        entries.push((META_ENTRY.to_string(), self.cfg.to_meta()));
        checkpoint::save(path, &entries)
    }

    /// Rebuilds the architecture from the stored record and loads every weight.
    pub fn load(path: &Path) -> Result<(WaveSeg, ParamStore)> {
        let mut entries = checkpoint::load(path)?;
        let pos = entries
            .iter()
            .position(|(n, _)| n == META_ENTRY)
            .ok_or_else(|| Error::Data(format!("{} has no architecture record", path.display())))?;
        let (_, meta) = entries.remove(pos);
        let cfg = DecoderConfig::from_meta(&meta)?;
        let (model, mut store) = WaveSeg::new(cfg, 0)?;
        store.load(&entries)?;
        Ok((model, store))
    }
}

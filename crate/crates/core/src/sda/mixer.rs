//! Frequency-split token mixer: the low band goes through a [`RepBlock`],
//! the three detail bands through a scan block, then the inverse transform.

use crate::autograd::Var;
use crate::error::{dim_err, Result};
use crate::ops::concat_channels;
use crate::params::{Bound, ParamStore};
use crate::sda::rep::RepBlock;
use crate::ssm::{VssmConfig, VssmParams};

/// What the mixer does with its input.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum MixerKind {
    /// Wavelet split with Rep (low) and scan (high) paths.
    #[default]
    Wavelet,
    /// A single scan block on the undecomposed input.
    VssmOnly,
}

#[derive(Clone, Debug)]
pub enum HighPath {
    /// One block over the three detail bands stacked along channels.
    Shared(VssmParams),
    /// One block per detail band, in the order LH, HL, HH.
    PerBand(Vec<VssmParams>),
}

#[derive(Clone, Debug)]
pub struct WaveletMixer {
    pub channels: usize,
    pub kind: MixerKind,
    pub rep: Option<RepBlock>,
    pub high: HighPath,
}

#[derive(Clone, Debug)]
pub struct MixerConfig {
    pub kind: MixerKind,
    pub vssm: VssmConfig,
    pub per_band: bool,
    /// Register the Rep path in merged (inference) form.
    pub merged: bool,
}

impl WaveletMixer {
    pub fn register(
        store: &mut ParamStore,
        prefix: &str,
        channels: usize,
        cfg: &MixerConfig,
    ) -> Result<Self> {
        let c = channels;
        if cfg.kind == MixerKind::VssmOnly {
            let v = VssmParams::register(store, &format!("{prefix}.vssm"), c, cfg.vssm.clone())?;
            return Ok(Self {
                channels,
                kind: cfg.kind,
                rep: None,
                high: HighPath::Shared(v),
            });
        }
        let rep = if cfg.merged {
            RepBlock::register_merged(store, &format!("{prefix}.rep"), c)
        } else {
            RepBlock::register(store, &format!("{prefix}.rep"), c)
        };
        let high = if cfg.per_band {
            let bands = ["lh", "hl", "hh"]
                .iter()
                .map(|b| {
                    VssmParams::register(store, &format!("{prefix}.vssm_{b}"), c, cfg.vssm.clone())
                })
                .collect::<Result<_>>()?;
            HighPath::PerBand(bands)
        } else {
            HighPath::Shared(VssmParams::register(
                store,
                &format!("{prefix}.vssm"),
                3 * c,
                cfg.vssm.clone(),
            )?)
        };
        Ok(Self {
            channels,
            kind: cfg.kind,
            rep: Some(rep),
            high,
        })
    }

    pub fn forward<'t>(&self, p: &Bound<'t>, y: Var<'t>) -> Result<Var<'t>> {
        let (_, c, h, w) = y.dims4()?;
        if c != self.channels {
            return Err(dim_err!(
                "mixer built for {} channels, got {c}",
                self.channels
            ));
        }
        let Some(rep) = &self.rep else {
            let HighPath::Shared(v) = &self.high else {
                unreachable!("scan-only mixer has a single block")
            };
            return v.forward(p, y);
        };
        if h % 2 != 0 || w % 2 != 0 {
            return Err(dim_err!("wavelet mixer needs even extents, got {h}x{w}"));
        }
        let bands = y.dwt2d_stacked()?;
        let low = rep.forward(p, bands.narrow(1, 0, c)?)?;
        let high = match &self.high {
            HighPath::Shared(v) => v.forward(p, bands.narrow(1, c, 3 * c)?)?,
            HighPath::PerBand(vs) => {
                let outs = vs
                    .iter()
                    .enumerate()
                    .map(|(i, v)| v.forward(p, bands.narrow(1, (i + 1) * c, c)?))
                    .collect::<Result<Vec<_>>>()?;
                concat_channels(&outs)?
            }
        };
        concat_channels(&[low, high])?.idwt2d_stacked()
    }

    fn scans(&self) -> Vec<&VssmParams> {
        match &self.high {
            HighPath::Shared(v) => vec![v],
            HighPath::PerBand(vs) => vs.iter().collect(),
        }
    }

    /// Every path passes its input through, so the mixer is the identity.
    pub fn make_identity(&self, store: &mut ParamStore) -> Result<()> {
        if let Some(rep) = &self.rep {
            rep.set_identity_only(store, 1.0)?;
        }
        self.scans()
            .into_iter()
            .try_for_each(|v| v.make_identity(store))
    }

    /// Every path outputs zero, so the mixer is the zero map.
    pub fn make_zero(&self, store: &mut ParamStore) -> Result<()> {
        if let Some(rep) = &self.rep {
            rep.set_identity_only(store, 0.0)?;
        }
        self.scans()
            .into_iter()
            .try_for_each(|v| v.make_zero(store))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::Tape;
    use crate::rng::SeededRng;
    use crate::tensor::Tensor;

    fn cfg(kind: MixerKind, per_band: bool) -> MixerConfig {
        MixerConfig {
            kind,
            vssm: VssmConfig {
                state: 4,
                ..Default::default()
            },
            per_band,
            merged: false,
        }
    }

    fn run(store: &ParamStore, m: &WaveletMixer, x: &Tensor) -> crate::Result<Tensor> {
        let tape = Tape::new();
        let p = store.bind_frozen(&tape);
        Ok(m.forward(&p, tape.constant(x.clone()))?.value())
    }

    #[test]
    fn shapes_and_zero_input() {
        for (kind, per_band) in [
            (MixerKind::Wavelet, false),
            (MixerKind::Wavelet, true),
            (MixerKind::VssmOnly, false),
        ] {
            let mut store = ParamStore::new(1);
            let m = WaveletMixer::register(&mut store, "m", 4, &cfg(kind, per_band)).unwrap();
            let x = SeededRng::new(2).uniform_tensor(&[2, 4, 8, 8], -1.0, 1.0);
            assert_eq!(run(&store, &m, &x).unwrap().shape(), x.shape());
            let z = run(&store, &m, &Tensor::zeros(&[1, 4, 4, 4])).unwrap();
            assert!(z.data().iter().all(|&v| v == 0.0), "{kind:?}");
        }
    }

    #[test]
    fn large_shape_contract() {
        let mut store = ParamStore::new(3);
        let m =
            WaveletMixer::register(&mut store, "m", 16, &cfg(MixerKind::Wavelet, false)).unwrap();
        let x = SeededRng::new(4).uniform_tensor(&[2, 16, 16, 16], -1.0, 1.0);
        assert_eq!(run(&store, &m, &x).unwrap().shape(), &[2, 16, 16, 16]);
    }

    #[test]
    fn identity_paths_reconstruct_input() {
        for per_band in [false, true] {
            let mut store = ParamStore::new(5);
            let m = WaveletMixer::register(&mut store, "m", 4, &cfg(MixerKind::Wavelet, per_band))
                .unwrap();
            m.make_identity(&mut store).unwrap();
            let x = SeededRng::new(6).uniform_tensor(&[1, 4, 8, 8], -1.0, 1.0);
            assert!(run(&store, &m, &x).unwrap().max_abs_diff(&x) <= 1e-8);
        }
    }

    #[test]
    fn odd_extent_is_dimension_error() {
        let mut store = ParamStore::new(7);
        let m =
            WaveletMixer::register(&mut store, "m", 2, &cfg(MixerKind::Wavelet, false)).unwrap();
        let r = run(&store, &m, &Tensor::zeros(&[1, 2, 5, 4]));
        assert!(matches!(r, Err(crate::Error::Dimension(_))));
    }

    #[test]
    fn bounded_energy_over_random_draws() {
        let mut store = ParamStore::new(8);
        let m =
            WaveletMixer::register(&mut store, "m", 2, &cfg(MixerKind::Wavelet, false)).unwrap();
        let mut rng = SeededRng::new(9);
        let mut kappa = 0.0f64;
        for _ in 0..200 {
            let x = rng.normal_tensor(&[1, 2, 4, 4]);
            let y = run(&store, &m, &x).unwrap();
            assert!(y.is_finite());
            kappa = kappa.max(y.sq_norm() / x.sq_norm());
        }
        assert!(kappa.is_finite() && kappa < 1e3, "energy gain {kappa}");
    }
}

use crate::error::{Error, Result};
use crate::sda::MixerKind;
use crate::ssm::{ScanMode, VssmConfig};
use crate::tensor::Tensor;

/// What occupies the two attention-block sites.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum SdaMode {
    #[default]
    On,
    /// Sites are skipped.
    Off,
    /// Residual 3×3 convolution stand-in.
    Conv,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecoderConfig {
    pub c_dec: usize,
    pub num_classes: usize,
    pub encoder_channels: [usize; 4],
    pub unshuffle: usize,
    pub ffn_expansion: usize,
    pub vssm: VssmConfig,
    pub per_band: bool,
    pub mixer: MixerKind,
    pub hpg: bool,
    pub sda: SdaMode,
    /// Rep paths stored as merged kernels (inference checkpoints).
    pub merged: bool,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        Self {
            c_dec: 32,
            num_classes: 4,
            encoder_channels: [16, 32, 64, 96],
            unshuffle: 2,
            ffn_expansion: 4,
            vssm: VssmConfig::default(),
            per_band: false,
            mixer: MixerKind::Wavelet,
            hpg: true,
            sda: SdaMode::On,
            merged: false,
        }
    }
}

const META_VERSION: f64 = 1.0;
const META_LEN: usize = 16;

impl DecoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.c_dec == 0 || !self.c_dec.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "decoder width must be even and positive, got {}",
                self.c_dec
            )));
        }
        if self.num_classes == 0 || self.num_classes > 256 {
            return Err(Error::Config(format!(
                "class count must be in 1..=256, got {}",
                self.num_classes
            )));
        }
        if self.unshuffle != 2 {
            return Err(Error::Config(format!(
                "unshuffle factor must be 2, got {}",
                self.unshuffle
            )));
        }
        if self.encoder_channels.contains(&0) || self.ffn_expansion == 0 || self.vssm.state == 0 {
            return Err(Error::Config(
                "channel counts, expansion and state size must be positive".into(),
            ));
        }
        if self.vssm.directions != 2 && self.vssm.directions != 4 {
            return Err(Error::Config(format!(
                "scan directions must be 2 or 4, got {}",
                self.vssm.directions
            )));
        }
        Ok(())
    }

    /// Architecture description stored alongside the weights.
    pub fn to_meta(&self) -> Tensor {
        let e = self.encoder_channels;
        let v = vec![
            META_VERSION,
            self.c_dec as f64,
            self.num_classes as f64,
            e[0] as f64,
            e[1] as f64,
            e[2] as f64,
            e[3] as f64,
            self.unshuffle as f64,
            self.ffn_expansion as f64,
            self.vssm.state as f64,
            self.vssm.directions as f64,
            self.per_band as u8 as f64,
            match self.mixer {
                MixerKind::Wavelet => 0.0,
                MixerKind::VssmOnly => 1.0,
            },
            self.hpg as u8 as f64,
            match self.sda {
                SdaMode::On => 0.0,
                SdaMode::Off => 1.0,
                SdaMode::Conv => 2.0,
            },
            self.merged as u8 as f64,
        ];
        Tensor::new(&[META_LEN], v).expect("fixed meta length")
    }

    pub fn from_meta(meta: &Tensor) -> Result<Self> {
        let bad = |what: &str| Error::Data(format!("invalid architecture record: {what}"));
        if meta.shape() != [META_LEN] {
            return Err(bad("wrong length"));
        }
        let m = meta.data();
        if m[0] != META_VERSION {
            return Err(bad("unknown version"));
        }
        let int = |i: usize| -> Result<usize> {
            let v = m[i];
            if v < 0.0 || v.fract() != 0.0 || v > 1e9 {
                return Err(bad("non-integer field"));
            }
            Ok(v as usize)
        };
        let flag = |i: usize| -> Result<bool> {
            match int(i)? {
                0 => Ok(false),
                1 => Ok(true),
                _ => Err(bad("flag out of range")),
            }
        };
        let cfg = Self {
            c_dec: int(1)?,
            num_classes: int(2)?,
            encoder_channels: [int(3)?, int(4)?, int(5)?, int(6)?],
            unshuffle: int(7)?,
            ffn_expansion: int(8)?,
            vssm: VssmConfig {
                state: int(9)?,
                directions: int(10)?,
                mode: ScanMode::Sequential,
            },
            per_band: flag(11)?,
            mixer: match int(12)? {
                0 => MixerKind::Wavelet,
                1 => MixerKind::VssmOnly,
                _ => return Err(bad("mixer kind")),
            },
            hpg: flag(13)?,
            sda: match int(14)? {
                0 => SdaMode::On,
                1 => SdaMode::Off,
                2 => SdaMode::Conv,
                _ => return Err(bad("attention mode")),
            },
            merged: flag(15)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

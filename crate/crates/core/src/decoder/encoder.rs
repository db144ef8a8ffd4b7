use crate::autograd::Var;
use crate::error::{dim_err, Result};
use crate::ops::ConvSpec;
use crate::params::{Bound, ParamId, ParamStore};

/// Encoder outputs at strides 2, 4, 8 and 16.
#[derive(Clone, Copy, Debug)]
pub struct FeaturePyramid<'t> {
    pub f1: Var<'t>,
    pub f2: Var<'t>,
    pub f3: Var<'t>,
    pub f4: Var<'t>,
}

/// Four stride-2 3×3 convolutions with GELU.
#[derive(Clone, Debug)]
pub struct ToyEncoder {
    pub channels: [usize; 4],
    pub stages: Vec<(ParamId, ParamId)>,
}

impl ToyEncoder {
    pub fn register(store: &mut ParamStore, prefix: &str, channels: [usize; 4]) -> Self {
        let mut cin = 3;
        let stages = channels
            .iter()
            .enumerate()
            .map(|(i, &c)| {
                let w = store.fan_in(
                    format!("{prefix}.stage{}.weight", i + 1),
                    &[c, cin, 3, 3],
                    9 * cin,
                );
                let b = store.zeros(format!("{prefix}.stage{}.bias", i + 1), &[c]);
                cin = c;
                (w, b)
            })
            .collect();
        Self { channels, stages }
    }

    pub fn forward<'t>(&self, p: &Bound<'t>, image: Var<'t>) -> Result<FeaturePyramid<'t>> {
        let (_, c, h, w) = image.dims4()?;
        if c != 3 {
            return Err(dim_err!("encoder expects a 3-channel image, got {c}"));
        }
        if h % 16 != 0 || w % 16 != 0 || h == 0 || w == 0 {
            return Err(dim_err!(
                "encoder needs extents divisible by 16, got {h}x{w}"
            ));
        }
        let mut x = image;
        let mut outs = Vec::with_capacity(4);
        for &(wt, b) in &self.stages {
            x = x
                .conv2d(p.get(wt), Some(p.get(b)), ConvSpec::new(2, 1, 1))?
                .gelu()?;
            outs.push(x);
        }
        Ok(FeaturePyramid {
            f1: outs[0],
            f2: outs[1],
            f3: outs[2],
            f4: outs[3],
        })
    }
}

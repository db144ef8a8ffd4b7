//! Spatial resampling: bilinear resize and 2×2 average pooling.

use crate::autograd::Var;
use crate::error::{dim_err, Error, Result};
use crate::tensor::Tensor;

/// Interpolation taps along one axis: `(i0, i1, w1)`, sampling
/// `(1 - w1)·src[i0] + w1·src[i1]`.
///
/// Sample centres sit at `(i + 0.5)·scale - 0.5`, clamped to the valid range.
fn taps(input: usize, output: usize) -> Vec<(usize, usize, f64)> {
    let scale = input as f64 / output as f64;
    (0..output)
        .map(|i| {
            let src = ((i as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(input - 1);
            let i1 = (i0 + 1).min(input - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

struct Plan {
    planes: usize,
    h: usize,
    w: usize,
    oh: usize,
    ow: usize,
    ys: Vec<(usize, usize, f64)>,
    xs: Vec<(usize, usize, f64)>,
}

impl Plan {
    fn forward(&self, src: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.planes * self.oh * self.ow];
        for p in 0..self.planes {
            let s = &src[p * self.h * self.w..];
            let o = &mut out[p * self.oh * self.ow..];
            for (oy, &(y0, y1, wy)) in self.ys.iter().enumerate() {
                for (ox, &(x0, x1, wx)) in self.xs.iter().enumerate() {
                    let top = s[y0 * self.w + x0] * (1.0 - wx) + s[y0 * self.w + x1] * wx;
                    let bot = s[y1 * self.w + x0] * (1.0 - wx) + s[y1 * self.w + x1] * wx;
                    o[oy * self.ow + ox] = top * (1.0 - wy) + bot * wy;
                }
            }
        }
        out
    }

    fn backward(&self, g: &[f64], slot: &mut [f64]) {
        for p in 0..self.planes {
            let s = &mut slot[p * self.h * self.w..(p + 1) * self.h * self.w];
            let go = &g[p * self.oh * self.ow..];
            for (oy, &(y0, y1, wy)) in self.ys.iter().enumerate() {
                for (ox, &(x0, x1, wx)) in self.xs.iter().enumerate() {
                    let v = go[oy * self.ow + ox];
                    s[y0 * self.w + x0] += v * (1.0 - wy) * (1.0 - wx);
                    s[y0 * self.w + x1] += v * (1.0 - wy) * wx;
                    s[y1 * self.w + x0] += v * wy * (1.0 - wx);
                    s[y1 * self.w + x1] += v * wy * wx;
                }
            }
        }
    }
}

fn plan(shape: &[usize], oh: usize, ow: usize) -> Result<Plan> {
    let [b, c, h, w] = *shape else {
        return Err(dim_err!("resize expects a 4-D tensor, got {shape:?}"));
    };
    if oh == 0 || ow == 0 || h == 0 || w == 0 {
        return Err(Error::Config(format!(
            "resize {h}x{w} -> {oh}x{ow} needs positive extents"
        )));
    }
    Ok(Plan {
        planes: b * c,
        h,
        w,
        oh,
        ow,
        ys: taps(h, oh),
        xs: taps(w, ow),
    })
}

pub fn resize_bilinear_tensor(x: &Tensor, oh: usize, ow: usize) -> Result<Tensor> {
    let (b, c, h, w) = x.dims4()?;
    if (h, w) == (oh, ow) {
        return Ok(x.clone());
    }
    let p = plan(x.shape(), oh, ow)?;
    Tensor::new(&[b, c, oh, ow], p.forward(x.data()))
}

impl<'t> Var<'t> {
    /// Bilinear resize of the two spatial axes (corner-unaligned sampling).
    /// Same-size requests return the input unchanged.
    pub fn resize_bilinear(self, oh: usize, ow: usize) -> Result<Var<'t>> {
        let (b, c, h, w) = self.dims4()?;
        let p = plan(&[b, c, h, w], oh, ow)?;
        if (h, w) == (oh, ow) {
            return Ok(self);
        }
        let out = Tensor::new(&[b, c, oh, ow], p.forward(self.value().data()))?;
        let id = self.id();
        self.tape().record(out, &[self], move |g, sink| {
            if let Some(slot) = sink.slot(id) {
                p.backward(g, slot);
            }
        })
    }

    /// Non-overlapping 2×2 mean pooling.
    pub fn avg_pool2(self) -> Result<Var<'t>> {
        let (b, c, h, w) = self.dims4()?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(dim_err!("avg_pool2 needs even extents, got {h}x{w}"));
        }
        let (oh, ow) = (h / 2, w / 2);
        let xv = self.value();
        let src = xv.data();
        let mut out = vec![0.0; b * c * oh * ow];
        for p in 0..b * c {
            for y in 0..oh {
                for x in 0..ow {
                    let at = |dy: usize, dx: usize| src[(p * h + 2 * y + dy) * w + 2 * x + dx];
                    out[(p * oh + y) * ow + x] = 0.25 * (at(0, 0) + at(0, 1) + at(1, 0) + at(1, 1));
                }
            }
        }
        let out = Tensor::new(&[b, c, oh, ow], out)?;
        let id = self.id();
        self.tape().record(out, &[self], move |g, sink| {
            if let Some(slot) = sink.slot(id) {
                for p in 0..b * c {
                    for y in 0..oh {
                        for x in 0..ow {
                            let v = 0.25 * g[(p * oh + y) * ow + x];
                            for (dy, dx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                                slot[(p * h + 2 * y + dy) * w + 2 * x + dx] += v;
                            }
                        }
                    }
                }
            }
        })
    }
}

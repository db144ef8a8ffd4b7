//! 2-D cross-correlation with stride, per-axis zero padding, and groups.

use crate::autograd::Var;
use crate::error::{dim_err, Error, Result};
use crate::ops::gemm::gemm;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub stride: usize,
    pub pad_h: usize,
    pub pad_w: usize,
    pub groups: usize,
}

impl ConvSpec {
    pub fn new(stride: usize, padding: usize, groups: usize) -> Self {
        Self {
            stride,
            pad_h: padding,
            pad_w: padding,
            groups,
        }
    }

    /// Stride 1 with padding that keeps the spatial size for odd kernels.
    pub fn same(kh: usize, kw: usize) -> Self {
        Self {
            stride: 1,
            pad_h: kh / 2,
            pad_w: kw / 2,
            groups: 1,
        }
    }

    pub fn groups(mut self, groups: usize) -> Self {
        self.groups = groups;
        self
    }
}

#[derive(Clone, Copy, Debug)]
struct Geometry {
    batch: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    kh: usize,
    kw: usize,
    ho: usize,
    wo: usize,
    spec: ConvSpec,
}

impl Geometry {
    fn cin_g(&self) -> usize {
        self.cin / self.spec.groups
    }
    fn cout_g(&self) -> usize {
        self.cout / self.spec.groups
    }
    fn k(&self) -> usize {
        self.cin_g() * self.kh * self.kw
    }
    fn p(&self) -> usize {
        self.ho * self.wo
    }
    fn depthwise(&self) -> bool {
        self.cin_g() == 1 && self.cout_g() == 1
    }
}

fn geometry(x: &[usize], w: &[usize], bias: Option<&[usize]>, spec: ConvSpec) -> Result<Geometry> {
    let [batch, cin, h, wid] = *x else {
        return Err(dim_err!("conv2d input must be 4-D, got {x:?}"));
    };
    let [cout, cin_g, kh, kw] = *w else {
        return Err(dim_err!("conv2d weight must be 4-D, got {w:?}"));
    };
    if spec.groups == 0 || spec.stride == 0 {
        return Err(Error::Config(
            "conv2d stride and groups must be positive".into(),
        ));
    }
    if cin % spec.groups != 0 || cout % spec.groups != 0 {
        return Err(Error::Config(format!(
            "groups {} must divide input channels {cin} and output channels {cout}",
            spec.groups
        )));
    }
    if cin_g != cin / spec.groups {
        return Err(dim_err!(
            "weight {w:?} expects {cin_g} channels per group, input provides {}",
            cin / spec.groups
        ));
    }
    if let Some(b) = bias {
        if b != [cout] {
            return Err(dim_err!(
                "bias shape {b:?} does not match {cout} output channels"
            ));
        }
    }
    let hp = h + 2 * spec.pad_h;
    let wp = wid + 2 * spec.pad_w;
    if hp < kh || wp < kw {
        return Err(dim_err!(
            "kernel {kh}x{kw} larger than padded input {hp}x{wp}"
        ));
    }
    Ok(Geometry {
        batch,
        cin,
        h,
        w: wid,
        cout,
        kh,
        kw,
        ho: (hp - kh) / spec.stride + 1,
        wo: (wp - kw) / spec.stride + 1,
        spec,
    })
}

/// Unfolds one group of one image into a `(cin_g·kh·kw) × (ho·wo)` matrix.
fn im2col(g: &Geometry, img: &[f64], cols: &mut [f64]) {
    let (s, ph, pw) = (
        g.spec.stride as isize,
        g.spec.pad_h as isize,
        g.spec.pad_w as isize,
    );
    let p = g.p();
    for c in 0..g.cin_g() {
        let plane = &img[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = ((c * g.kh + ky) * g.kw + kx) * p;
                for oy in 0..g.ho {
                    let iy = oy as isize * s - ph + ky as isize;
                    let dst = &mut cols[row + oy * g.wo..row + (oy + 1) * g.wo];
                    if iy < 0 || iy >= g.h as isize {
                        dst.fill(0.0);
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let ix = ox as isize * s - pw + kx as isize;
                        *d = if ix < 0 || ix >= g.w as isize {
                            0.0
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters column gradients back onto the image.
fn col2im(g: &Geometry, cols: &[f64], img: &mut [f64]) {
    let (s, ph, pw) = (
        g.spec.stride as isize,
        g.spec.pad_h as isize,
        g.spec.pad_w as isize,
    );
    let p = g.p();
    for c in 0..g.cin_g() {
        let plane = &mut img[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = ((c * g.kh + ky) * g.kw + kx) * p;
                for oy in 0..g.ho {
                    let iy = oy as isize * s - ph + ky as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let src = &cols[row + oy * g.wo..row + (oy + 1) * g.wo];
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, v) in src.iter().enumerate() {
                        let ix = ox as isize * s - pw + kx as isize;
                        if ix >= 0 && ix < g.w as isize {
                            dst[ix as usize] += v;
                        }
                    }
                }
            }
        }
    }
}

fn forward(g: &Geometry, x: &[f64], w: &[f64], bias: Option<&[f64]>) -> Vec<f64> {
    let (p, k) = (g.p(), g.k());
    let mut out = vec![0.0; g.batch * g.cout * p];
    if g.depthwise() {
        depthwise_forward(g, x, w, &mut out);
    } else {
        let mut cols = vec![0.0; k * p];
        for b in 0..g.batch {
            for grp in 0..g.spec.groups {
                let img = &x[(b * g.cin + grp * g.cin_g()) * g.h * g.w..];
                im2col(g, img, &mut cols);
                let wg = &w[grp * g.cout_g() * k..(grp + 1) * g.cout_g() * k];
                let o0 = (b * g.cout + grp * g.cout_g()) * p;
                gemm(
                    g.cout_g(),
                    k,
                    p,
                    wg,
                    false,
                    &cols,
                    false,
                    &mut out[o0..o0 + g.cout_g() * p],
                    0.0,
                );
            }
        }
    }
    if let Some(bias) = bias {
        for (i, plane) in out.chunks_mut(p).enumerate() {
            let bv = bias[i % g.cout];
            plane.iter_mut().for_each(|v| *v += bv);
        }
    }
    out
}

/// Calls `f(tap, out_index, in_index, len)` for every in-bounds run of
/// output columns sharing one kernel tap and output row; within a run the
/// input index advances by the stride.
fn depthwise_runs(g: &Geometry, mut f: impl FnMut(usize, usize, usize, usize)) {
    let (s, ph, pw) = (
        g.spec.stride as isize,
        g.spec.pad_h as isize,
        g.spec.pad_w as isize,
    );
    for ky in 0..g.kh {
        for kx in 0..g.kw {
            // output columns whose input column lies inside the image
            let lo = (0..g.wo).find(|&ox| ox as isize * s - pw + kx as isize >= 0);
            let Some(lo) = lo else { continue };
            let hi = (lo..g.wo)
                .take_while(|&ox| ((ox as isize * s - pw + kx as isize) as usize) < g.w)
                .last();
            let Some(hi) = hi else { continue };
            let ix0 = (lo as isize * s - pw + kx as isize) as usize;
            for oy in 0..g.ho {
                let iy = oy as isize * s - ph + ky as isize;
                if iy < 0 || iy >= g.h as isize {
                    continue;
                }
                f(
                    ky * g.kw + kx,
                    oy * g.wo + lo,
                    iy as usize * g.w + ix0,
                    hi - lo + 1,
                );
            }
        }
    }
}

fn depthwise_forward(g: &Geometry, x: &[f64], w: &[f64], out: &mut [f64]) {
    let (hw, p, kk, s) = (g.h * g.w, g.p(), g.kh * g.kw, g.spec.stride);
    for b in 0..g.batch {
        for c in 0..g.cin {
            let img = &x[(b * g.cin + c) * hw..(b * g.cin + c + 1) * hw];
            let o = &mut out[(b * g.cout + c) * p..(b * g.cout + c + 1) * p];
            let wc = &w[c * kk..(c + 1) * kk];
            depthwise_runs(g, |tap, o0, i0, len| {
                let wv = wc[tap];
                let dst = &mut o[o0..o0 + len];
                if s == 1 {
                    for (d, v) in dst.iter_mut().zip(&img[i0..i0 + len]) {
                        *d += wv * v;
                    }
                } else {
                    for (j, d) in dst.iter_mut().enumerate() {
                        *d += wv * img[i0 + j * s];
                    }
                }
            });
        }
    }
}

fn depthwise_backward(
    g: &Geometry,
    x: &[f64],
    w: &[f64],
    gout: &[f64],
    gx: Option<&mut [f64]>,
    gw: Option<&mut [f64]>,
) {
    let (hw, p, kk, s) = (g.h * g.w, g.p(), g.kh * g.kw, g.spec.stride);
    let mut gx = gx;
    let mut gw = gw;
    for b in 0..g.batch {
        for c in 0..g.cin {
            let img = &x[(b * g.cin + c) * hw..(b * g.cin + c + 1) * hw];
            let go = &gout[(b * g.cout + c) * p..(b * g.cout + c + 1) * p];
            let wc = &w[c * kk..(c + 1) * kk];
            let mut gxc = gx
                .as_deref_mut()
                .map(|v| &mut v[(b * g.cin + c) * hw..(b * g.cin + c + 1) * hw]);
            let mut gwc = gw.as_deref_mut().map(|v| &mut v[c * kk..(c + 1) * kk]);
            depthwise_runs(g, |tap, o0, i0, len| {
                let src = &go[o0..o0 + len];
                if let Some(gxc) = gxc.as_deref_mut() {
                    let wv = wc[tap];
                    for (j, gv) in src.iter().enumerate() {
                        gxc[i0 + j * s] += gv * wv;
                    }
                }
                if let Some(gwc) = gwc.as_deref_mut() {
                    let mut acc = 0.0;
                    for (j, gv) in src.iter().enumerate() {
                        acc += gv * img[i0 + j * s];
                    }
                    gwc[tap] += acc;
                }
            });
        }
    }
}

fn backward(
    g: &Geometry,
    x: &[f64],
    w: &[f64],
    gout: &[f64],
    mut gx: Option<&mut [f64]>,
    mut gw: Option<&mut [f64]>,
) {
    if g.depthwise() {
        return depthwise_backward(g, x, w, gout, gx, gw);
    }
    let (p, k) = (g.p(), g.k());
    let mut cols = vec![0.0; k * p];
    let mut gcols = vec![0.0; k * p];
    for b in 0..g.batch {
        for grp in 0..g.spec.groups {
            let i0 = (b * g.cin + grp * g.cin_g()) * g.h * g.w;
            let o0 = (b * g.cout + grp * g.cout_g()) * p;
            let go = &gout[o0..o0 + g.cout_g() * p];
            let wrange = grp * g.cout_g() * k..(grp + 1) * g.cout_g() * k;
            if let Some(gw) = gw.as_deref_mut() {
                im2col(g, &x[i0..], &mut cols);
                // gW[cout_g × k] += gOut[cout_g × p] · colsᵀ
                gemm(
                    g.cout_g(),
                    p,
                    k,
                    go,
                    false,
                    &cols,
                    true,
                    &mut gw[wrange.clone()],
                    1.0,
                );
            }
            if let Some(gx) = gx.as_deref_mut() {
                // gcols[k × p] = Wᵀ · gOut
                gemm(
                    k,
                    g.cout_g(),
                    p,
                    &w[wrange],
                    true,
                    go,
                    false,
                    &mut gcols,
                    0.0,
                );
                col2im(g, &gcols, &mut gx[i0..i0 + g.cin_g() * g.h * g.w]);
            }
        }
    }
}

/// Plain-tensor convolution (no tape).
pub fn conv2d_tensor(
    x: &Tensor,
    w: &Tensor,
    bias: Option<&Tensor>,
    spec: ConvSpec,
) -> Result<Tensor> {
    let g = geometry(x.shape(), w.shape(), bias.map(|b| b.shape()), spec)?;
    let out = forward(&g, x.data(), w.data(), bias.map(|b| b.data()));
    Tensor::new(&[g.batch, g.cout, g.ho, g.wo], out)
}

impl<'t> Var<'t> {
    /// Cross-correlation with weight `(out_ch, in_ch / groups, kh, kw)`.
    pub fn conv2d(self, weight: Var<'t>, bias: Option<Var<'t>>, spec: ConvSpec) -> Result<Var<'t>> {
        let (xv, wv) = (self.value(), weight.value());
        let bv = bias.map(|b| b.value());
        let g = geometry(xv.shape(), wv.shape(), bv.as_ref().map(|b| b.shape()), spec)?;
        let out = forward(&g, xv.data(), wv.data(), bv.as_ref().map(|b| b.data()));
        let out = Tensor::new(&[g.batch, g.cout, g.ho, g.wo], out)?;
        let (xid, wid, bid) = (self.id(), weight.id(), bias.map(|b| b.id()));
        let mut parents = vec![self, weight];
        parents.extend(bias);
        self.tape().record(out, &parents, move |gout, sink| {
            if let Some(bid) = bid {
                if let Some(gb) = sink.slot(bid) {
                    for (i, plane) in gout.chunks(g.p()).enumerate() {
                        gb[i % g.cout] += plane.iter().sum::<f64>();
                    }
                }
            }
            let mut gx = sink.wants(xid).then(|| vec![0.0; xv.numel()]);
            let mut gw = sink.wants(wid).then(|| vec![0.0; wv.numel()]);
            backward(
                &g,
                xv.data(),
                wv.data(),
                gout,
                gx.as_deref_mut(),
                gw.as_deref_mut(),
            );
            if let Some(gx) = gx {
                sink.add(xid, &gx);
            }
            if let Some(gw) = gw {
                sink.add(wid, &gw);
            }
        })
    }
}

/// Free-function form mirroring the usual `(stride, padding, groups)` signature.
pub fn conv2d<'t>(
    input: Var<'t>,
    weight: Var<'t>,
    bias: Option<Var<'t>>,
    stride: usize,
    padding: usize,
    groups: usize,
) -> Result<Var<'t>> {
    input.conv2d(weight, bias, ConvSpec::new(stride, padding, groups))
}

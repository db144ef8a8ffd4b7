//! Channel layer normalization and axis softmax.

use crate::autograd::Var;
use crate::error::{dim_err, Error, Result};
use crate::tensor::Tensor;

/// Splits a shape around `axis` into `(outer, extent, inner)`.
fn split_axis(shape: &[usize], axis: usize) -> Result<(usize, usize, usize)> {
    if axis >= shape.len() {
        return Err(Error::Config(format!(
            "axis {axis} out of range for shape {shape:?}"
        )));
    }
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    Ok((outer, shape[axis], inner))
}

impl<'t> Var<'t> {
    /// Normalizes across the channel axis (axis 1) at every other position,
    /// then applies a per-channel gain and shift.
    pub fn layer_norm(self, gain: Var<'t>, shift: Var<'t>, eps: f64) -> Result<Var<'t>> {
        if eps <= 0.0 {
            return Err(Error::Config(format!(
                "layer_norm eps must be positive, got {eps}"
            )));
        }
        let xv = self.value();
        let (gv, sv) = (gain.value(), shift.value());
        if xv.rank() < 2 {
            return Err(dim_err!(
                "layer_norm needs a channel axis, got {:?}",
                xv.shape()
            ));
        }
        let (outer, c, inner) = split_axis(xv.shape(), 1)?;
        if gv.shape() != [c] || sv.shape() != [c] {
            return Err(dim_err!(
                "layer_norm gain {:?} / shift {:?} must match {c} channels",
                gv.shape(),
                sv.shape()
            ));
        }
        let x = xv.data();
        let mut xhat = vec![0.0; x.len()];
        let mut inv_std = vec![0.0; outer * inner];
        for o in 0..outer {
            for i in 0..inner {
                let at = |k: usize| (o * c + k) * inner + i;
                let mean = (0..c).map(|k| x[at(k)]).sum::<f64>() / c as f64;
                let var = (0..c).map(|k| (x[at(k)] - mean).powi(2)).sum::<f64>() / c as f64;
                let r = 1.0 / (var + eps).sqrt();
                inv_std[o * inner + i] = r;
                for k in 0..c {
                    xhat[at(k)] = (x[at(k)] - mean) * r;
                }
            }
        }
        let out: Vec<f64> = xhat
            .iter()
            .enumerate()
            .map(|(j, &v)| {
                let k = (j / inner) % c;
                v * gv.data()[k] + sv.data()[k]
            })
            .collect();
        let out = Tensor::new(xv.shape(), out)?;
        let (xid, gid, sid) = (self.id(), gain.id(), shift.id());
        self.tape()
            .record(out, &[self, gain, shift], move |g, sink| {
                if let Some(slot) = sink.slot(sid) {
                    for (j, gv) in g.iter().enumerate() {
                        slot[(j / inner) % c] += gv;
                    }
                }
                if let Some(slot) = sink.slot(gid) {
                    for (j, gv) in g.iter().enumerate() {
                        slot[(j / inner) % c] += gv * xhat[j];
                    }
                }
                if let Some(slot) = sink.slot(xid) {
                    for o in 0..outer {
                        for i in 0..inner {
                            let at = |k: usize| (o * c + k) * inner + i;
                            let gx = |k: usize| g[at(k)] * gv.data()[k];
                            let m1 = (0..c).map(gx).sum::<f64>() / c as f64;
                            let m2 = (0..c).map(|k| gx(k) * xhat[at(k)]).sum::<f64>() / c as f64;
                            let r = inv_std[o * inner + i];
                            for k in 0..c {
                                slot[at(k)] += r * (gx(k) - m1 - xhat[at(k)] * m2);
                            }
                        }
                    }
                }
            })
    }

    /// Max-stabilized softmax along `axis`.
    pub fn softmax_axis(self, axis: usize) -> Result<Var<'t>> {
        let xv = self.value();
        let out = softmax_tensor(&xv, axis)?;
        let (_, n, inner) = split_axis(xv.shape(), axis)?;
        let y = out.clone();
        let id = self.id();
        self.tape().record(out, &[self], move |g, sink| {
            if let Some(slot) = sink.slot(id) {
                let y = y.data();
                for base in (0..y.len()).filter(|j| (j / inner) % n == 0) {
                    let at = |k: usize| base + k * inner;
                    let dot: f64 = (0..n).map(|k| g[at(k)] * y[at(k)]).sum();
                    for k in 0..n {
                        slot[at(k)] += y[at(k)] * (g[at(k)] - dot);
                    }
                }
            }
        })
    }
}

pub fn softmax_tensor(x: &Tensor, axis: usize) -> Result<Tensor> {
    let (outer, n, inner) = split_axis(x.shape(), axis)?;
    let src = x.data();
    let mut out = vec![0.0; src.len()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |k: usize| (o * n + k) * inner + i;
            let max = (0..n).map(|k| src[at(k)]).fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for k in 0..n {
                let e = (src[at(k)] - max).exp();
                out[at(k)] = e;
                total += e;
            }
            for k in 0..n {
                out[at(k)] /= total;
            }
        }
    }
    Tensor::new(x.shape(), out)
}

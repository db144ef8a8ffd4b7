use crate::autograd::Var;
use crate::error::{dim_err, Result};
use crate::ops::gemm::gemm;
use crate::tensor::Tensor;

impl<'t> Var<'t> {
    /// Affine map over the last axis: `y = x · Wᵀ + b` with `W` of shape `(out, in)`.
    pub fn linear(self, weight: Var<'t>, bias: Option<Var<'t>>) -> Result<Var<'t>> {
        let (xv, wv) = (self.value(), weight.value());
        let [n_out, n_in] = *wv.shape() else {
            return Err(dim_err!("linear weight must be 2-D, got {:?}", wv.shape()));
        };
        let last = xv.shape().last().copied().unwrap_or(0);
        if last != n_in {
            return Err(dim_err!(
                "linear expects last extent {n_in}, input has shape {:?}",
                xv.shape()
            ));
        }
        let bv = bias.map(|b| b.value());
        if let Some(b) = &bv {
            if b.shape() != [n_out] {
                return Err(dim_err!(
                    "linear bias shape {:?}, expected [{n_out}]",
                    b.shape()
                ));
            }
        }
        let rows = xv.numel() / n_in;
        let mut out = vec![0.0; rows * n_out];
        gemm(
            rows,
            n_in,
            n_out,
            xv.data(),
            false,
            wv.data(),
            true,
            &mut out,
            0.0,
        );
        if let Some(b) = &bv {
            for row in out.chunks_mut(n_out) {
                row.iter_mut().zip(b.data()).for_each(|(o, b)| *o += b);
            }
        }
        let mut shape = xv.shape().to_vec();
        *shape.last_mut().unwrap() = n_out;
        let out = Tensor::new(&shape, out)?;
        let (xid, wid, bid) = (self.id(), weight.id(), bias.map(|b| b.id()));
        let mut parents = vec![self, weight];
        parents.extend(bias);
        self.tape().record(out, &parents, move |g, sink| {
            if let Some(slot) = sink.slot(xid) {
                gemm(rows, n_out, n_in, g, false, wv.data(), false, slot, 1.0);
            }
            if let Some(slot) = sink.slot(wid) {
                gemm(n_out, rows, n_in, g, true, xv.data(), false, slot, 1.0);
            }
            if let Some(bid) = bid {
                if let Some(slot) = sink.slot(bid) {
                    for row in g.chunks(n_out) {
                        slot.iter_mut().zip(row).for_each(|(s, v)| *s += v);
                    }
                }
            }
        })
    }
}

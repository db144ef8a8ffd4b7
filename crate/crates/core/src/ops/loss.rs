use crate::autograd::Var;
use crate::error::{dim_err, Error, Result};
use crate::tensor::Tensor;

impl<'t> Var<'t> {
    /// Mean pixelwise cross-entropy of `(b, k, h, w)` logits against
    /// `b·h·w` class ids, computed through log-sum-exp.
    pub fn cross_entropy(self, labels: &[u8]) -> Result<Var<'t>> {
        let (b, k, h, w) = self.dims4()?;
        let hw = h * w;
        if labels.len() != b * hw {
            return Err(dim_err!(
                "{} labels for logits of shape {:?}",
                labels.len(),
                self.shape()
            ));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l as usize >= k) {
            return Err(Error::Data(format!(
                "label {bad} out of range for {k} classes"
            )));
        }
        let xv = self.value();
        let x = xv.data();
        let n = (b * hw) as f64;
        let mut probs = vec![0.0; x.len()];
        let mut loss = 0.0;
        for n_ in 0..b {
            for p in 0..hw {
                let at = |c: usize| (n_ * k + c) * hw + p;
                let max = (0..k).map(|c| x[at(c)]).fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = (0..k).map(|c| (x[at(c)] - max).exp()).sum();
                let lse = max + z.ln();
                loss += lse - x[at(labels[n_ * hw + p] as usize)];
                for c in 0..k {
                    probs[at(c)] = (x[at(c)] - lse).exp();
                }
            }
        }
        let labels = labels.to_vec();
        let id = self.id();
        self.tape()
            .record(Tensor::scalar(loss / n), &[self], move |g, sink| {
                if let Some(slot) = sink.slot(id) {
                    let scale = g[0] / n;
                    for (s, p) in slot.iter_mut().zip(&probs) {
                        *s += scale * p;
                    }
                    for (i, &l) in labels.iter().enumerate() {
                        let (n_, p) = (i / hw, i % hw);
                        slot[(n_ * k + l as usize) * hw + p] -= scale;
                    }
                }
            })
    }
}

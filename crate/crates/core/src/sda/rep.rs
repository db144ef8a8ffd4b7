//! Re-parameterizable convolution: a 3×3, a 1×1, and a scaled identity
//! branch that fold into one 3×3 kernel for inference.

use crate::autograd::Var;
use crate::error::{dim_err, Result};
use crate::ops::ConvSpec;
use crate::params::{Bound, ParamId, ParamStore};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub enum RepForm {
    Branches {
        k3: ParamId,
        k1: ParamId,
        identity_scale: ParamId,
    },
    Merged {
        weight: ParamId,
    },
}

#[derive(Clone, Debug)]
pub struct RepBlock {
    pub channels: usize,
    pub form: RepForm,
    pub bias: ParamId,
}

impl RepBlock {
    /// Training form with separate branches.
    pub fn register(store: &mut ParamStore, prefix: &str, channels: usize) -> Self {
        let c = channels;
        let k3 = store.fan_in(format!("{prefix}.k3"), &[c, c, 3, 3], 9 * c);
        let k1 = store.fan_in(format!("{prefix}.k1"), &[c, c, 1, 1], c);
        let identity_scale = store.full(format!("{prefix}.identity_scale"), &[c], 1.0);
        let bias = store.zeros(format!("{prefix}.bias"), &[c]);
        Self {
            channels,
            form: RepForm::Branches {
                k3,
                k1,
                identity_scale,
            },
            bias,
        }
    }

    /// Inference form holding a single merged 3×3 kernel.
    pub fn register_merged(store: &mut ParamStore, prefix: &str, channels: usize) -> Self {
        let c = channels;
        let weight = store.fan_in(format!("{prefix}.merged"), &[c, c, 3, 3], 9 * c);
        let bias = store.zeros(format!("{prefix}.bias"), &[c]);
        Self {
            channels,
            form: RepForm::Merged { weight },
            bias,
        }
    }

    pub fn is_merged(&self) -> bool {
        matches!(self.form, RepForm::Merged { .. })
    }

    pub fn forward<'t>(&self, p: &Bound<'t>, x: Var<'t>) -> Result<Var<'t>> {
        let c = x.dims4()?.1;
        if c != self.channels {
            return Err(dim_err!(
                "RepBlock built for {} channels, got {c}",
                self.channels
            ));
        }
        let bias = Some(p.get(self.bias));
        match self.form {
            RepForm::Merged { weight } => x.conv2d(p.get(weight), bias, ConvSpec::same(3, 3)),
            RepForm::Branches {
                k3,
                k1,
                identity_scale,
            } => {
                let y3 = x.conv2d(p.get(k3), bias, ConvSpec::same(3, 3))?;
                let y1 = x.conv2d(p.get(k1), None, ConvSpec::same(1, 1))?;
                let scale = p.get(identity_scale).reshape(&[c, 1, 1, 1])?;
                let yi = x.conv2d(scale, None, ConvSpec::same(1, 1).groups(c))?;
                y3.add(y1)?.add(yi)
            }
        }
    }

    /// The single kernel equivalent to the current branches; the stored
    /// kernel itself when already merged.
    pub fn merged_kernel(&self, store: &ParamStore) -> Result<Tensor> {
        match self.form {
            RepForm::Merged { weight } => Ok(store.get(weight).clone()),
            RepForm::Branches {
                k3,
                k1,
                identity_scale,
            } => merge_kernels(store.get(k3), store.get(k1), store.get(identity_scale)),
        }
    }

    /// Copies this block's values from `src` (branch or merged form) into
    /// `dst`, folding branches when `self` is merged.
    pub fn transfer(
        &self,
        src_block: &RepBlock,
        src: &ParamStore,
        dst: &mut ParamStore,
    ) -> Result<()> {
        dst.set(self.bias, src.get(src_block.bias).clone())?;
        match (&self.form, &src_block.form) {
            (RepForm::Merged { weight }, _) => dst.set(*weight, src_block.merged_kernel(src)?),
            (
                RepForm::Branches {
                    k3,
                    k1,
                    identity_scale,
                },
                RepForm::Branches {
                    k3: s3,
                    k1: s1,
                    identity_scale: si,
                },
            ) => {
                dst.set(*k3, src.get(*s3).clone())?;
                dst.set(*k1, src.get(*s1).clone())?;
                dst.set(*identity_scale, src.get(*si).clone())
            }
            (RepForm::Branches { .. }, RepForm::Merged { .. }) => Err(crate::error::Error::Config(
                "a merged RepBlock cannot be split back into branches".into(),
            )),
        }
    }

    /// Sets every branch to zero and the identity scale to `scale`.
    pub fn set_identity_only(&self, store: &mut ParamStore, scale: f64) -> Result<()> {
        let c = self.channels;
        store.set(self.bias, Tensor::zeros(&[c]))?;
        match self.form {
            RepForm::Merged { weight } => store.set(
                weight,
                merge_kernels(
                    &Tensor::zeros(&[c, c, 3, 3]),
                    &Tensor::zeros(&[c, c, 1, 1]),
                    &Tensor::full(&[c], scale),
                )?,
            ),
            RepForm::Branches {
                k3,
                k1,
                identity_scale,
            } => {
                store.set(k3, Tensor::zeros(&[c, c, 3, 3]))?;
                store.set(k1, Tensor::zeros(&[c, c, 1, 1]))?;
                store.set(identity_scale, Tensor::full(&[c], scale))
            }
        }
    }
}

/// `k3 + pad(k1) + diag(scale)` with the 1×1 and identity taps at the kernel center.
pub fn merge_kernels(k3: &Tensor, k1: &Tensor, identity_scale: &Tensor) -> Result<Tensor> {
    let (co, ci, kh, kw) = k3.dims4()?;
    if (kh, kw) != (3, 3)
        || k1.shape() != [co, ci, 1, 1]
        || identity_scale.shape() != [co]
        || co != ci
    {
        return Err(dim_err!(
            "cannot merge kernels {:?}, {:?} with identity {:?}",
            k3.shape(),
            k1.shape(),
            identity_scale.shape()
        ));
    }
    let mut merged = k3.clone();
    let m = merged.data_mut();
    for o in 0..co {
        for i in 0..ci {
            m[((o * ci + i) * 3 + 1) * 3 + 1] += k1.data()[o * ci + i];
        }
        m[((o * ci + o) * 3 + 1) * 3 + 1] += identity_scale.data()[o];
    }
    Ok(merged)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::Tape;
    use crate::gradcheck::grad_check_wrt;
    use crate::ops::conv2d_tensor;
    use crate::rng::SeededRng;

    fn run(store: &ParamStore, r: &RepBlock, x: &Tensor) -> Tensor {
        let tape = Tape::new();
        let p = store.bind_frozen(&tape);
        r.forward(&p, tape.constant(x.clone())).unwrap().value()
    }

    #[test]
    fn identity_branch_alone_is_identity() {
        let mut store = ParamStore::new(1);
        let r = RepBlock::register(&mut store, "r", 4);
        r.set_identity_only(&mut store, 1.0).unwrap();
        let x = SeededRng::new(2).uniform_tensor(&[1, 4, 8, 8], -1.0, 1.0);
        assert_eq!(run(&store, &r, &x), x);
    }

    #[test]
    fn three_by_three_branch_isolated() {
        let mut store = ParamStore::new(3);
        let r = RepBlock::register(&mut store, "r", 3);
        let RepForm::Branches {
            k3,
            k1,
            identity_scale,
        } = r.form
        else {
            unreachable!()
        };
        store.set(k1, Tensor::zeros(&[3, 3, 1, 1])).unwrap();
        store.set(identity_scale, Tensor::zeros(&[3])).unwrap();
        let x = SeededRng::new(4).uniform_tensor(&[2, 3, 5, 5], -1.0, 1.0);
        let expect = conv2d_tensor(&x, store.get(k3), None, ConvSpec::same(3, 3)).unwrap();
        assert!(run(&store, &r, &x).max_abs_diff(&expect) < 1e-14);
    }

    #[test]
    fn merge_of_zero_and_identity_only() {
        let z = merge_kernels(
            &Tensor::zeros(&[2, 2, 3, 3]),
            &Tensor::zeros(&[2, 2, 1, 1]),
            &Tensor::zeros(&[2]),
        )
        .unwrap();
        assert!(z.data().iter().all(|&v| v == 0.0));
        let d = merge_kernels(
            &Tensor::zeros(&[2, 2, 3, 3]),
            &Tensor::zeros(&[2, 2, 1, 1]),
            &Tensor::ones(&[2]),
        )
        .unwrap();
        for o in 0..2 {
            for i in 0..2 {
                for t in 0..9 {
                    let expect = if o == i && t == 4 { 1.0 } else { 0.0 };
                    assert_eq!(d.data()[(o * 2 + i) * 9 + t], expect);
                }
            }
        }
    }

    #[test]
    fn merged_form_matches_branches() {
        let mut rng = SeededRng::new(5);
        for draw in 0..100 {
            let mut store = ParamStore::new(draw);
            let r = RepBlock::register(&mut store, "r", 4);
            let RepForm::Branches { identity_scale, .. } = r.form else {
                unreachable!()
            };
            store
                .set(identity_scale, rng.uniform_tensor(&[4], -1.0, 1.0))
                .unwrap();
            store
                .set(r.bias, rng.uniform_tensor(&[4], -1.0, 1.0))
                .unwrap();
            let mut merged_store = ParamStore::new(draw);
            let m = RepBlock::register_merged(&mut merged_store, "r", 4);
            m.transfer(&r, &store, &mut merged_store).unwrap();
            let x = rng.uniform_tensor(&[1, 4, 8, 8], -1.0, 1.0);
            let (a, b) = (run(&store, &r, &x), run(&merged_store, &m, &x));
            assert!(
                a.max_rel_diff(&b) <= 1e-10,
                "draw {draw}: {}",
                a.max_rel_diff(&b)
            );
        }
    }

    #[test]
    fn merging_is_idempotent() {
        let mut store = ParamStore::new(6);
        let r = RepBlock::register(&mut store, "r", 3);
        let mut once = ParamStore::new(0);
        let m1 = RepBlock::register_merged(&mut once, "r", 3);
        m1.transfer(&r, &store, &mut once).unwrap();
        let mut twice = ParamStore::new(1);
        let m2 = RepBlock::register_merged(&mut twice, "r", 3);
        m2.transfer(&m1, &once, &mut twice).unwrap();
        assert_eq!(once.get(m1.bias), twice.get(m2.bias));
        assert_eq!(
            m1.merged_kernel(&once).unwrap(),
            m2.merged_kernel(&twice).unwrap()
        );
    }

    #[test]
    fn channel_mismatch_is_dimension_error() {
        let mut store = ParamStore::new(7);
        let r = RepBlock::register(&mut store, "r", 3);
        let tape = Tape::new();
        let p = store.bind_frozen(&tape);
        let x = tape.constant(Tensor::zeros(&[1, 2, 4, 4]));
        assert!(matches!(
            r.forward(&p, x),
            Err(crate::error::Error::Dimension(_))
        ));
    }

    #[test]
    fn branch_form_passes_grad_check() {
        let mut store = ParamStore::new(8);
        let r = RepBlock::register(&mut store, "r", 2);
        let mut inputs = vec![SeededRng::new(9).uniform_tensor(&[1, 2, 4, 4], -1.0, 1.0)];
        inputs.extend(store.values());
        let err = grad_check_wrt(
            |tape, vs| {
                r.forward(&Bound::from_vars(tape, vs[1..].to_vec()), vs[0])?
                    .sum()
            },
            &inputs,
            1e-5,
        )
        .unwrap();
        assert!(err <= 1e-6, "{err}");
    }
}

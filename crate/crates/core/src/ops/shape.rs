//! Index rearrangements: reshape, permute, flip, concat, narrow, and
//! pixel (un)shuffle.

use std::sync::Arc;

use crate::autograd::Var;
use crate::error::{dim_err, Error, Result};
use crate::tensor::Tensor;

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// `out[j] = input[map[j]]` where `map` is a bijection or injection.
fn gather<'t>(x: Var<'t>, shape: &[usize], map: Vec<usize>) -> Result<Var<'t>> {
    let xv = x.value();
    let src = xv.data();
    let out = Tensor::new(shape, map.iter().map(|&i| src[i]).collect())?;
    let map = Arc::new(map);
    let id = x.id();
    x.tape().record(out, &[x], move |g, sink| {
        if let Some(slot) = sink.slot(id) {
            for (gv, &i) in g.iter().zip(map.iter()) {
                slot[i] += gv;
            }
        }
    })
}

fn permutation_map(shape: &[usize], perm: &[usize]) -> Result<(Vec<usize>, Vec<usize>)> {
    let mut seen = vec![false; shape.len()];
    if perm.len() != shape.len()
        || perm
            .iter()
            .any(|&p| p >= shape.len() || std::mem::replace(&mut seen[p], true))
    {
        return Err(Error::Config(format!(
            "{perm:?} is not a permutation of {} axes",
            shape.len()
        )));
    }
    let in_strides = strides(shape);
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let numel: usize = shape.iter().product();
    let mut map = Vec::with_capacity(numel);
    let mut idx = vec![0usize; shape.len()];
    for _ in 0..numel {
        map.push(idx.iter().zip(perm).map(|(&i, &p)| i * in_strides[p]).sum());
        for ax in (0..idx.len()).rev() {
            idx[ax] += 1;
            if idx[ax] < out_shape[ax] {
                break;
            }
            idx[ax] = 0;
        }
    }
    Ok((out_shape, map))
}

pub fn unshuffle_map(b: usize, c: usize, h: usize, w: usize, f: usize) -> Vec<usize> {
    let (oh, ow) = (h / f, w / f);
    let mut map = Vec::with_capacity(b * c * h * w);
    for n in 0..b {
        for ch in 0..c {
            for dy in 0..f {
                for dx in 0..f {
                    for y in 0..oh {
                        for x in 0..ow {
                            map.push(((n * c + ch) * h + y * f + dy) * w + x * f + dx);
                        }
                    }
                }
            }
        }
    }
    map
}

impl<'t> Var<'t> {
    pub fn reshape(self, shape: &[usize]) -> Result<Var<'t>> {
        let out = self.value().reshape(shape)?;
        let id = self.id();
        self.tape()
            .record(out, &[self], move |g, sink| sink.add(id, g))
    }

    /// Reorders axes so that output axis `i` is input axis `perm[i]`.
    pub fn permute(self, perm: &[usize]) -> Result<Var<'t>> {
        let (shape, map) = permutation_map(&self.shape(), perm)?;
        gather(self, &shape, map)
    }

    /// Reverses the order of entries along `axis`.
    pub fn flip(self, axis: usize) -> Result<Var<'t>> {
        let shape = self.shape();
        if axis >= shape.len() {
            return Err(Error::Config(format!(
                "flip axis {axis} out of range for {shape:?}"
            )));
        }
        let st = strides(&shape);
        let n = shape[axis];
        let map = (0..shape.iter().product::<usize>())
            .map(|j| {
                let i = (j / st[axis]) % n;
                j + (n - 1 - i) * st[axis] - i * st[axis]
            })
            .collect();
        gather(self, &shape, map)
    }

    /// Contiguous slice `start..start + len` along `axis`.
    pub fn narrow(self, axis: usize, start: usize, len: usize) -> Result<Var<'t>> {
        let shape = self.shape();
        if axis >= shape.len() || start + len > shape[axis] {
            return Err(dim_err!(
                "narrow({axis}, {start}, {len}) out of range for {shape:?}"
            ));
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let n = shape[axis];
        let mut out_shape = shape.clone();
        out_shape[axis] = len;
        let map = (0..outer)
            .flat_map(|o| (0..len * inner).map(move |r| (o * n + start) * inner + r))
            .collect();
        gather(self, &out_shape, map)
    }

    /// Space-to-depth: `(b, c, h, w) → (b, c·f², h/f, w/f)`. Output channel
    /// `c·f² + dy·f + dx` holds offset `(dy, dx)` of each `f × f` block.
    pub fn pixel_unshuffle(self, factor: usize) -> Result<Var<'t>> {
        let (b, c, h, w) = self.dims4()?;
        if factor == 0 || h % factor != 0 || w % factor != 0 {
            return Err(dim_err!(
                "pixel_unshuffle factor {factor} does not divide {h}x{w}"
            ));
        }
        let map = unshuffle_map(b, c, h, w, factor);
        gather(self, &[b, c * factor * factor, h / factor, w / factor], map)
    }

    /// Depth-to-space; exact inverse of [`Var::pixel_unshuffle`].
    pub fn pixel_shuffle(self, factor: usize) -> Result<Var<'t>> {
        let (b, cf, h, w) = self.dims4()?;
        let ff = factor * factor;
        if factor == 0 || cf % ff != 0 {
            return Err(dim_err!(
                "pixel_shuffle factor {factor} does not divide {cf} channels"
            ));
        }
        let forward = unshuffle_map(b, cf / ff, h * factor, w * factor, factor);
        let mut map = vec![0; forward.len()];
        for (j, &i) in forward.iter().enumerate() {
            map[i] = j;
        }
        gather(self, &[b, cf / ff, h * factor, w * factor], map)
    }
}

/// Concatenates along `axis`; all other extents must agree.
pub fn concat<'t>(parts: &[Var<'t>], axis: usize) -> Result<Var<'t>> {
    let first = parts
        .first()
        .ok_or_else(|| Error::Config("concat of zero tensors".into()))?;
    let tape = first.tape();
    let shapes: Vec<Vec<usize>> = parts.iter().map(|p| p.shape()).collect();
    let base = &shapes[0];
    if axis >= base.len() {
        return Err(Error::Config(format!(
            "concat axis {axis} out of range for {base:?}"
        )));
    }
    for s in &shapes {
        let same = s.len() == base.len()
            && s.iter()
                .zip(base)
                .enumerate()
                .all(|(i, (a, b))| i == axis || a == b);
        if !same {
            return Err(dim_err!(
                "concat shapes disagree off axis {axis}: {base:?} vs {s:?}"
            ));
        }
    }
    let outer: usize = base[..axis].iter().product();
    let inner: usize = base[axis + 1..].iter().product();
    let total: usize = shapes.iter().map(|s| s[axis]).sum();
    let values: Vec<Tensor> = parts.iter().map(|p| p.value()).collect();
    let mut out = Vec::with_capacity(outer * total * inner);
    for o in 0..outer {
        for (v, s) in values.iter().zip(&shapes) {
            let chunk = s[axis] * inner;
            out.extend_from_slice(&v.data()[o * chunk..(o + 1) * chunk]);
        }
    }
    let mut shape = base.clone();
    shape[axis] = total;
    let out = Tensor::new(&shape, out)?;
    let ids: Vec<(usize, usize)> = parts
        .iter()
        .zip(&shapes)
        .map(|(p, s)| (p.id(), s[axis] * inner))
        .collect();
    tape.record(out, parts, move |g, sink| {
        let row = total * inner;
        let mut offset = 0;
        for &(id, chunk) in &ids {
            if let Some(slot) = sink.slot(id) {
                for o in 0..outer {
                    let src = &g[o * row + offset..o * row + offset + chunk];
                    slot[o * chunk..(o + 1) * chunk]
                        .iter_mut()
                        .zip(src)
                        .for_each(|(s, v)| *s += v);
                }
            }
            offset += chunk;
        }
    })
}

pub fn concat_channels<'t>(parts: &[Var<'t>]) -> Result<Var<'t>> {
    concat(parts, 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::Tape;
    use crate::gradcheck::grad_check;
    use crate::rng::SeededRng;
    use proptest::prelude::*;

    #[test]
    fn unshuffle_orders_block_in_raster() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::new(&[1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let y = x.pixel_unshuffle(2).unwrap().value();
        assert_eq!(y.shape(), [1, 4, 1, 1]);
        assert_eq!(y.data(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn unshuffle_factor_one_is_identity() {
        let tape = Tape::new();
        let x = SeededRng::new(1).uniform_tensor(&[2, 3, 4, 6], -1.0, 1.0);
        assert_eq!(
            tape.constant(x.clone()).pixel_unshuffle(1).unwrap().value(),
            x
        );
    }

    #[test]
    fn unshuffle_rejects_indivisible() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::zeros(&[1, 1, 4, 6]));
        assert!(matches!(x.pixel_unshuffle(4), Err(Error::Dimension(_))));
    }

    #[test]
    fn permute_and_flip() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::from_fn(&[2, 3], |i| i as f64));
        let t = x.permute(&[1, 0]).unwrap().value();
        assert_eq!(t.shape(), [3, 2]);
        assert_eq!(t.data(), &[0.0, 3.0, 1.0, 4.0, 2.0, 5.0]);
        assert_eq!(
            x.flip(1).unwrap().value().data(),
            &[2.0, 1.0, 0.0, 5.0, 4.0, 3.0]
        );
        assert_eq!(
            x.flip(0).unwrap().value().data(),
            &[3.0, 4.0, 5.0, 0.0, 1.0, 2.0]
        );
        assert!(matches!(x.permute(&[0, 0]), Err(Error::Config(_))));
    }

    #[test]
    fn concat_then_narrow_round_trips() {
        let tape = Tape::new();
        let mut rng = SeededRng::new(2);
        let a = rng.uniform_tensor(&[2, 3, 2, 2], -1.0, 1.0);
        let b = rng.uniform_tensor(&[2, 5, 2, 2], -1.0, 1.0);
        let cat = concat_channels(&[tape.constant(a.clone()), tape.constant(b.clone())]).unwrap();
        assert_eq!(cat.shape(), [2, 8, 2, 2]);
        assert_eq!(cat.narrow(1, 0, 3).unwrap().value(), a);
        assert_eq!(cat.narrow(1, 3, 5).unwrap().value(), b);
    }

    #[test]
    fn rearrangement_gradients() {
        let x = SeededRng::new(3).uniform_tensor(&[2, 2, 4, 4], -1.0, 1.0);
        let w = SeededRng::new(4).uniform_tensor(&[2, 8, 2, 2], -1.0, 1.0);
        let err = grad_check(
            move |t, v| {
                let y = v.pixel_unshuffle(2)?.flip(3)?.permute(&[0, 1, 3, 2])?;
                let y = concat_channels(&[y.narrow(1, 4, 4)?, y.narrow(1, 0, 4)?])?;
                y.mul(t.constant(w.clone()))
            },
            &x,
            1e-4,
        )
        .unwrap();
        assert!(err <= 1e-9);
    }

    proptest! {
        #[test]
        fn unshuffle_shuffle_is_exact_identity(b in 1usize..3, c in 1usize..4, hb in 1usize..4, wb in 1usize..4, f in 1usize..4, seed in any::<u64>()) {
            let tape = Tape::new();
            let x = SeededRng::new(seed).uniform_tensor(&[b, c, hb * f, wb * f], -1.0, 1.0);
            let y = tape.constant(x.clone()).pixel_unshuffle(f).unwrap();
            prop_assert_eq!(y.shape(), vec![b, c * f * f, hb, wb]);
            prop_assert_eq!(y.pixel_shuffle(f).unwrap().value(), x);
        }
    }
}

//! Single-level orthonormal 2-D Haar transform.
//!
//! Each 2×2 block `[[a, b], [c, d]]` of every channel maps to
//!
//! ```text
//! LL = (a + b + c + d) / 2    approximation
//! LH = (a + b - c - d) / 2    detail across rows (vertical position)
//! HL = (a - b + c - d) / 2    detail across columns (horizontal position)
//! HH = (a - b - c + d) / 2    diagonal detail
//! ```
//!
//! The LH/HL orientation is a convention: the transposed assignment is an
//! equally valid reading of the usual four-filter decomposition.
//!
//! The differentiable forms stack the bands along the channel axis in the
//! order `[LL, LH, HL, HH]`, so a `(b, c, h, w)` input becomes
//! `(b, 4c, h/2, w/2)`.

use crate::autograd::Var;
use crate::error::{dim_err, Result};
use crate::ops::concat_channels;
use crate::tensor::Tensor;

/// The four sub-bands of one analysis level, each `(b, c, h/2, w/2)`.
#[derive(Clone, Debug)]
pub struct WaveletSubbands<T> {
    pub ll: T,
    pub lh: T,
    pub hl: T,
    pub hh: T,
}

impl<T> WaveletSubbands<T> {
    pub fn as_array(&self) -> [&T; 4] {
        [&self.ll, &self.lh, &self.hl, &self.hh]
    }
}

/// Analysis on stacked layout: `(b, c, h, w)` → `(b, 4c, h/2, w/2)`.
fn analysis(x: &[f64], b: usize, c: usize, h: usize, w: usize) -> Vec<f64> {
    let (oh, ow) = (h / 2, w / 2);
    let band = c * oh * ow;
    let mut out = vec![0.0; b * 4 * band];
    for n in 0..b {
        let dst = &mut out[n * 4 * band..(n + 1) * 4 * band];
        for ch in 0..c {
            let plane = &x[(n * c + ch) * h * w..(n * c + ch + 1) * h * w];
            for y in 0..oh {
                for xx in 0..ow {
                    let a = plane[2 * y * w + 2 * xx];
                    let bb = plane[2 * y * w + 2 * xx + 1];
                    let cc = plane[(2 * y + 1) * w + 2 * xx];
                    let d = plane[(2 * y + 1) * w + 2 * xx + 1];
                    let o = (ch * oh + y) * ow + xx;
                    dst[o] = 0.5 * (a + bb + cc + d);
                    dst[band + o] = 0.5 * (a + bb - cc - d);
                    dst[2 * band + o] = 0.5 * (a - bb + cc - d);
                    dst[3 * band + o] = 0.5 * (a - bb - cc + d);
                }
            }
        }
    }
    out
}

/// Synthesis on stacked layout: `(b, 4c, h, w)` → `(b, c, 2h, 2w)`.
/// The Haar matrix is symmetric and orthonormal, so this is also the
/// adjoint of [`analysis`].
fn synthesis(s: &[f64], b: usize, c: usize, h: usize, w: usize) -> Vec<f64> {
    let (oh, ow) = (2 * h, 2 * w);
    let band = c * h * w;
    let mut out = vec![0.0; b * c * oh * ow];
    for n in 0..b {
        let src = &s[n * 4 * band..(n + 1) * 4 * band];
        for ch in 0..c {
            let plane = &mut out[(n * c + ch) * oh * ow..(n * c + ch + 1) * oh * ow];
            for y in 0..h {
                for x in 0..w {
                    let o = (ch * h + y) * w + x;
                    let (ll, lh, hl, hh) =
                        (src[o], src[band + o], src[2 * band + o], src[3 * band + o]);
                    plane[2 * y * ow + 2 * x] = 0.5 * (ll + lh + hl + hh);
                    plane[2 * y * ow + 2 * x + 1] = 0.5 * (ll + lh - hl - hh);
                    plane[(2 * y + 1) * ow + 2 * x] = 0.5 * (ll - lh + hl - hh);
                    plane[(2 * y + 1) * ow + 2 * x + 1] = 0.5 * (ll - lh - hl + hh);
                }
            }
        }
    }
    out
}

fn check_even(shape: &[usize]) -> Result<(usize, usize, usize, usize)> {
    let [b, c, h, w] = *shape else {
        return Err(dim_err!("dwt2d expects a 4-D tensor, got {shape:?}"));
    };
    if h % 2 != 0 || w % 2 != 0 {
        return Err(dim_err!("dwt2d requires even spatial extents, got {h}x{w}"));
    }
    Ok((b, c, h, w))
}

fn split_stacked(
    stacked: &[f64],
    b: usize,
    c: usize,
    h: usize,
    w: usize,
) -> Result<WaveletSubbands<Tensor>> {
    let band = c * h * w;
    let take = |k: usize| {
        let data = (0..b)
            .flat_map(|n| {
                stacked[(4 * n + k) * band..(4 * n + k + 1) * band]
                    .iter()
                    .copied()
            })
            .collect();
        Tensor::new(&[b, c, h, w], data)
    };
    Ok(WaveletSubbands {
        ll: take(0)?,
        lh: take(1)?,
        hl: take(2)?,
        hh: take(3)?,
    })
}

/// Forward transform of a `(b, c, h, w)` tensor with even `h`, `w`.
pub fn dwt2d(input: &Tensor) -> Result<WaveletSubbands<Tensor>> {
    let (b, c, h, w) = check_even(input.shape())?;
    let stacked = analysis(input.data(), b, c, h, w);
    split_stacked(&stacked, b, c, h / 2, w / 2)
}

/// Inverse transform; `idwt2d(&dwt2d(x)?)? == x` up to rounding.
pub fn idwt2d(bands: &WaveletSubbands<Tensor>) -> Result<Tensor> {
    let shape = bands.ll.shape();
    for t in bands.as_array() {
        if t.shape() != shape {
            return Err(dim_err!(
                "sub-band shapes disagree: {:?} vs {:?}",
                shape,
                t.shape()
            ));
        }
    }
    let (b, c, h, w) = bands.ll.dims4()?;
    let band = c * h * w;
    let mut stacked = Vec::with_capacity(4 * b * band);
    for n in 0..b {
        for t in bands.as_array() {
            stacked.extend_from_slice(&t.data()[n * band..(n + 1) * band]);
        }
    }
    Tensor::new(&[b, c, 2 * h, 2 * w], synthesis(&stacked, b, c, h, w))
}

impl<'t> Var<'t> {
    /// Differentiable forward transform, bands stacked as `[LL, LH, HL, HH]`
    /// along channels.
    pub fn dwt2d_stacked(self) -> Result<Var<'t>> {
        let (b, c, h, w) = check_even(&self.shape())?;
        let out = Tensor::new(
            &[b, 4 * c, h / 2, w / 2],
            analysis(self.value().data(), b, c, h, w),
        )?;
        let id = self.id();
        self.tape().record(out, &[self], move |g, sink| {
            if sink.wants(id) {
                sink.add(id, &synthesis(g, b, c, h / 2, w / 2));
            }
        })
    }

    /// Differentiable inverse of [`Var::dwt2d_stacked`].
    pub fn idwt2d_stacked(self) -> Result<Var<'t>> {
        let (b, c4, h, w) = self.dims4()?;
        if c4 % 4 != 0 {
            return Err(dim_err!(
                "stacked sub-bands need a multiple of 4 channels, got {c4}"
            ));
        }
        let c = c4 / 4;
        let out = Tensor::new(
            &[b, c, 2 * h, 2 * w],
            synthesis(self.value().data(), b, c, h, w),
        )?;
        let id = self.id();
        self.tape().record(out, &[self], move |g, sink| {
            if sink.wants(id) {
                sink.add(id, &analysis(g, b, c, 2 * h, 2 * w));
            }
        })
    }
}

pub fn dwt2d_var(x: Var<'_>) -> Result<WaveletSubbands<Var<'_>>> {
    let c = x.dims4()?.1;
    let s = x.dwt2d_stacked()?;
    Ok(WaveletSubbands {
        ll: s.narrow(1, 0, c)?,
        lh: s.narrow(1, c, c)?,
        hl: s.narrow(1, 2 * c, c)?,
        hh: s.narrow(1, 3 * c, c)?,
    })
}

pub fn idwt2d_var<'t>(bands: &WaveletSubbands<Var<'t>>) -> Result<Var<'t>> {
    let shape = bands.ll.shape();
    for v in bands.as_array() {
        if v.shape() != shape {
            return Err(dim_err!(
                "sub-band shapes disagree: {:?} vs {:?}",
                shape,
                v.shape()
            ));
        }
    }
    concat_channels(&[bands.ll, bands.lh, bands.hl, bands.hh])?.idwt2d_stacked()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use crate::gradcheck::grad_check;
    use crate::rng::SeededRng;
    use proptest::prelude::*;

    #[test]
    fn constant_image_has_no_detail() {
        let bands = dwt2d(&Tensor::full(&[1, 2, 4, 6], 1.5)).unwrap();
        assert!(bands.ll.data().iter().all(|&v| v == 3.0));
        for t in [&bands.lh, &bands.hl, &bands.hh] {
            assert!(t.data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn single_block_by_hand() {
        let x = Tensor::new(&[1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let s = dwt2d(&x).unwrap();
        assert_eq!(s.ll.data(), &[5.0]);
        assert_eq!(s.lh.data(), &[-2.0]);
        assert_eq!(s.hl.data(), &[-1.0]);
        assert_eq!(s.hh.data(), &[0.0]);
    }

    #[test]
    fn horizontal_stripes_only_excite_lh() {
        let x = Tensor::from_fn(&[1, 1, 4, 4], |i| ((i / 4) % 2) as f64);
        let s = dwt2d(&x).unwrap();
        assert!(s.hl.data().iter().all(|&v| v == 0.0));
        assert!(s.hh.data().iter().all(|&v| v == 0.0));
        assert!(s.lh.data().iter().all(|&v| v == -1.0));
    }

    #[test]
    fn inverse_of_trivial_bands() {
        let z = Tensor::zeros(&[1, 2, 3, 3]);
        let zero = WaveletSubbands {
            ll: z.clone(),
            lh: z.clone(),
            hl: z.clone(),
            hh: z.clone(),
        };
        assert!(idwt2d(&zero).unwrap().data().iter().all(|&v| v == 0.0));
        let constant = WaveletSubbands {
            ll: Tensor::full(&[1, 2, 3, 3], 2.0 * 0.8),
            ..zero
        };
        assert!(idwt2d(&constant)
            .unwrap()
            .data()
            .iter()
            .all(|&v| (v - 0.8).abs() < 1e-15));
    }

    #[test]
    fn odd_extent_and_band_mismatch_rejected() {
        assert!(matches!(
            dwt2d(&Tensor::zeros(&[1, 1, 3, 4])),
            Err(Error::Dimension(_))
        ));
        let a = Tensor::zeros(&[1, 1, 2, 2]);
        let bad = WaveletSubbands {
            ll: a.clone(),
            lh: a.clone(),
            hl: a,
            hh: Tensor::zeros(&[1, 1, 2, 3]),
        };
        assert!(matches!(idwt2d(&bad), Err(Error::Dimension(_))));
    }

    #[test]
    fn round_trip_random() {
        let x = SeededRng::new(1).uniform_tensor(&[2, 3, 16, 16], -1.0, 1.0);
        let y = idwt2d(&dwt2d(&x).unwrap()).unwrap();
        assert!(y.max_abs_diff(&x) <= 1e-9);
    }

    #[test]
    fn transforms_are_differentiable() {
        let x = SeededRng::new(2).uniform_tensor(&[1, 2, 4, 6], -1.0, 1.0);
        let w = SeededRng::new(3).uniform_tensor(&[1, 8, 2, 3], -1.0, 1.0);
        let err = grad_check(
            move |t, v| v.dwt2d_stacked()?.mul(t.constant(w.clone())),
            &x,
            1e-4,
        )
        .unwrap();
        assert!(err <= 1e-6);
        let s = SeededRng::new(4).uniform_tensor(&[1, 8, 2, 3], -1.0, 1.0);
        let w = SeededRng::new(5).uniform_tensor(&[1, 2, 4, 6], -1.0, 1.0);
        let err = grad_check(
            move |t, v| v.idwt2d_stacked()?.mul(t.constant(w.clone())),
            &s,
            1e-4,
        )
        .unwrap();
        assert!(err <= 1e-6);
    }

    fn even_tensor() -> impl Strategy<Value = Tensor> {
        (1usize..3, 1usize..4, 1usize..6, 1usize..6, any::<u64>()).prop_map(|(b, c, h, w, seed)| {
            SeededRng::new(seed).uniform_tensor(&[b, c, 2 * h, 2 * w], -10.0, 10.0)
        })
    }

    proptest! {
        #[test]
        fn perfect_reconstruction_and_parseval(x in even_tensor()) {
            let bands = dwt2d(&x).unwrap();
            let energy: f64 = bands.as_array().iter().map(|t| t.sq_norm()).sum();
            prop_assert!((energy - x.sq_norm()).abs() <= 1e-9 * x.sq_norm().max(1e-300));
            let y = idwt2d(&bands).unwrap();
            prop_assert!(y.max_rel_diff(&x) <= 1e-9);
        }

        #[test]
        fn linearity(x in even_tensor(), alpha in -3.0f64..3.0, beta in -3.0f64..3.0, seed in any::<u64>()) {
            let y = SeededRng::new(seed).uniform_tensor(x.shape(), -10.0, 10.0);
            let mix = x.zip_map(&y, |a, b| alpha * a + beta * b).unwrap();
            let lhs = dwt2d(&mix).unwrap();
            let (bx, by) = (dwt2d(&x).unwrap(), dwt2d(&y).unwrap());
            for k in 0..4 {
                let rhs = bx.as_array()[k].zip_map(by.as_array()[k], |a, b| alpha * a + beta * b).unwrap();
                prop_assert!(lhs.as_array()[k].max_abs_diff(&rhs) <= 1e-10);
            }
        }
    }
}

//! Selective scan forward that discretizes each token as it is consumed.
//!
//! Memory is `O(batch · len · (channels + state))` for the operands plus one
//! `(channels, state)` hidden state; `ā` and `b̄` are never materialized.

use num_traits::Float;

use crate::error::{dim_err, Error, Result};
use crate::ssm::discretize::SERIES_THRESHOLD;

/// Borrowed operands of a selective scan.
///
/// Layouts (row-major): `x`, `delta` `(batch, len, channels)`; `a`
/// `(channels, state)`; `b`, `c` `(batch, len, state)`; `d` `(channels)`.
#[derive(Clone, Copy, Debug)]
pub struct TokenSsm<'a, T> {
    pub batch: usize,
    pub len: usize,
    pub channels: usize,
    pub state: usize,
    pub x: &'a [T],
    pub delta: &'a [T],
    pub a: &'a [T],
    pub b: &'a [T],
    pub c: &'a [T],
    pub d: &'a [T],
}

impl<T: Float> TokenSsm<'_, T> {
    fn validate(&self) -> Result<()> {
        let (bl, dd, n) = (self.batch * self.len, self.channels, self.state);
        let ok = self.x.len() == bl * dd
            && self.delta.len() == bl * dd
            && self.a.len() == dd * n
            && self.b.len() == bl * n
            && self.c.len() == bl * n
            && self.d.len() == dd;
        if ok {
            Ok(())
        } else {
            Err(dim_err!(
                "inconsistent scan operands for (batch {}, len {}, channels {dd}, state {n})",
                self.batch,
                self.len
            ))
        }
    }
}

/// `y_t = C_t h_t + d ⊙ x_t` with `h_t = exp(Δ_t a) ⊙ h_{t-1} + φ(Δ_t, a) B_t x_t`, `h_0 = 0`.
pub fn streaming_selective_scan<T: Float>(p: &TokenSsm<'_, T>) -> Result<Vec<T>> {
    p.validate()?;
    let (dd, n) = (p.channels, p.state);
    let threshold = T::from(SERIES_THRESHOLD).unwrap();
    let (half, sixth) = (T::from(0.5).unwrap(), T::from(1.0 / 6.0).unwrap());
    let mut y = vec![T::zero(); p.x.len()];
    let mut h = vec![T::zero(); dd * n];
    for bi in 0..p.batch {
        h.iter_mut().for_each(|v| *v = T::zero());
        for t in 0..p.len {
            let bt = bi * p.len + t;
            let bk = &p.b[bt * n..(bt + 1) * n];
            let ck = &p.c[bt * n..(bt + 1) * n];
            for ch in 0..dd {
                let step = p.delta[bt * dd + ch];
                if step.is_nan() || step <= T::zero() {
                    return Err(Error::Domain(format!(
                        "step size must be positive, got {}",
                        step.to_f64().unwrap_or(f64::NAN)
                    )));
                }
                let xv = p.x[bt * dd + ch];
                let hs = &mut h[ch * n..(ch + 1) * n];
                let ak = &p.a[ch * n..(ch + 1) * n];
                let mut acc = T::zero();
                for k in 0..n {
                    let z = step * ak[k];
                    let (a_bar, phi) = if z.abs() < threshold {
                        (z.exp(), step * (T::one() + z * half + z * z * sixth))
                    } else {
                        (z.exp(), z.exp_m1() / ak[k])
                    };
                    hs[k] = a_bar * hs[k] + phi * bk[k] * xv;
                    acc = acc + ck[k] * hs[k];
                }
                y[bt * dd + ch] = acc + p.d[ch] * xv;
            }
        }
    }
    Ok(y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;
    use crate::ssm::scan::sequential_scan;
    use crate::ssm::selective::discretize_tokens;
    use crate::tensor::Tensor;

    struct Operands {
        x: Tensor,
        delta: Tensor,
        a: Tensor,
        b: Tensor,
        c: Tensor,
        d: Tensor,
    }

    fn operands(seed: u64, batch: usize, len: usize, dd: usize, n: usize) -> Operands {
        let mut rng = SeededRng::new(seed);
        Operands {
            x: rng.uniform_tensor(&[batch, len, dd], -1.0, 1.0),
            delta: rng.uniform_tensor(&[batch, len, dd], 1e-3, 0.5),
            a: rng.uniform_tensor(&[dd, n], -4.0, -0.1),
            b: rng.uniform_tensor(&[batch, len, n], -1.0, 1.0),
            c: rng.uniform_tensor(&[batch, len, n], -1.0, 1.0),
            d: rng.uniform_tensor(&[dd], -1.0, 1.0),
        }
    }

    fn view<'a>(o: &'a Operands, dims: [usize; 4]) -> TokenSsm<'a, f64> {
        TokenSsm {
            batch: dims[0],
            len: dims[1],
            channels: dims[2],
            state: dims[3],
            x: o.x.data(),
            delta: o.delta.data(),
            a: o.a.data(),
            b: o.b.data(),
            c: o.c.data(),
            d: o.d.data(),
        }
    }

    #[test]
    fn matches_materialized_discretization() {
        for dims in [[1, 1, 1, 1], [2, 17, 3, 4], [1, 200, 4, 16]] {
            let o = operands(
                dims.iter().sum::<usize>() as u64,
                dims[0],
                dims[1],
                dims[2],
                dims[3],
            );
            let disc = discretize_tokens(&o.x, &o.delta, &o.a, &o.b, &o.c, &o.d).unwrap();
            let want = sequential_scan(&disc, o.x.data()).unwrap();
            let got = streaming_selective_scan(&view(&o, dims)).unwrap();
            let err = got
                .iter()
                .zip(&want)
                .map(|(g, w)| (g - w).abs())
                .fold(0.0, f64::max);
            assert!(err <= 1e-12, "{dims:?}: {err}");
        }
    }

    #[test]
    fn single_precision_tracks_double() {
        let dims = [1, 128, 4, 8];
        let o = operands(5, 1, 128, 4, 8);
        let want = streaming_selective_scan(&view(&o, dims)).unwrap();
        let cast = |t: &Tensor| t.data().iter().map(|&v| v as f32).collect::<Vec<f32>>();
        let (x, delta, a, b, c, d) = (
            cast(&o.x),
            cast(&o.delta),
            cast(&o.a),
            cast(&o.b),
            cast(&o.c),
            cast(&o.d),
        );
        let p = TokenSsm {
            batch: 1,
            len: 128,
            channels: 4,
            state: 8,
            x: &x,
            delta: &delta,
            a: &a,
            b: &b,
            c: &c,
            d: &d,
        };
        let got = streaming_selective_scan(&p).unwrap();
        let err = got
            .iter()
            .zip(&want)
            .map(|(g, w)| (*g as f64 - w).abs())
            .fold(0.0, f64::max);
        assert!(err <= 1e-4, "{err}");
    }

    #[test]
    fn rejects_bad_operands() {
        let o = operands(1, 1, 4, 2, 3);
        let mut p = view(&o, [1, 4, 2, 3]);
        p.len = 5;
        assert!(matches!(
            streaming_selective_scan(&p),
            Err(Error::Dimension(_))
        ));
        let zero = vec![0.0; 8];
        let p = TokenSsm {
            delta: &zero,
            ..view(&o, [1, 4, 2, 3])
        };
        assert!(matches!(
            streaming_selective_scan(&p),
            Err(Error::Domain(_))
        ));
    }
}

//! Linear recurrences `h_t = ā_t ⊙ h_{t-1} + b̄_t x_t`, `y_t = C_t h_t + D x_t`
//! evaluated either step by step or as an associative prefix combine.
//!
//! Both paths are generic over the float width so the benchmark can run in
//! single precision while tests use double.

use num_traits::Float;

use crate::error::{dim_err, Result};

/// Per-token discretized parameters of a diagonal selective SSM.
///
/// Layouts (row-major): `a_bar`, `b_bar` are `(batch, len, channels, state)`,
/// `c` is `(batch, len, state)`, `d` is `(channels)`, inputs and outputs are
/// `(batch, len, channels)`.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteSsm<T> {
    pub batch: usize,
    pub len: usize,
    pub channels: usize,
    pub state: usize,
    pub a_bar: Vec<T>,
    pub b_bar: Vec<T>,
    pub c: Vec<T>,
    pub d: Vec<T>,
}

impl<T: Float> DiscreteSsm<T> {
    /// Parameters that are constant over batch and time.
    #[allow(clippy::too_many_arguments)]
    pub fn uniform(
        batch: usize,
        len: usize,
        channels: usize,
        state: usize,
        a_bar: T,
        b_bar: T,
        c: T,
        d: T,
    ) -> Self {
        let full = batch * len * channels * state;
        Self {
            batch,
            len,
            channels,
            state,
            a_bar: vec![a_bar; full],
            b_bar: vec![b_bar; full],
            c: vec![c; batch * len * state],
            d: vec![d; channels],
        }
    }

    fn validate(&self, x: &[T]) -> Result<()> {
        let (b, l, dd, n) = (self.batch, self.len, self.channels, self.state);
        let ok = self.a_bar.len() == b * l * dd * n
            && self.b_bar.len() == b * l * dd * n
            && self.c.len() == b * l * n
            && self.d.len() == dd;
        if !ok {
            return Err(dim_err!(
                "inconsistent scan parameters for (batch {b}, len {l}, channels {dd}, state {n})"
            ));
        }
        if x.len() != b * l * dd {
            return Err(dim_err!(
                "scan input holds {} values, parameters describe {b}x{l}x{dd}",
                x.len()
            ));
        }
        Ok(())
    }

    #[inline]
    fn readout(&self, bt: usize, ch: usize, h: &[T], x: T) -> T {
        let c = &self.c[bt * self.state..(bt + 1) * self.state];
        let mut acc = T::zero();
        for (cv, hv) in c.iter().zip(h) {
            acc = acc + *cv * *hv;
        }
        acc + self.d[ch] * x
    }
}

/// Evaluation strategy for the recurrence.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum ScanMode {
    #[default]
    Sequential,
    Parallel,
}

/// Left-to-right recurrence with `h_0 = 0`.
pub fn sequential_scan<T: Float>(p: &DiscreteSsm<T>, x: &[T]) -> Result<Vec<T>> {
    p.validate(x)?;
    let (dd, n) = (p.channels, p.state);
    let mut y = vec![T::zero(); x.len()];
    let mut h = vec![T::zero(); dd * n];
    for b in 0..p.batch {
        h.iter_mut().for_each(|v| *v = T::zero());
        for t in 0..p.len {
            let bt = b * p.len + t;
            let base = bt * dd * n;
            for ch in 0..dd {
                let xv = x[bt * dd + ch];
                let hs = &mut h[ch * n..(ch + 1) * n];
                let a = &p.a_bar[base + ch * n..base + (ch + 1) * n];
                let bb = &p.b_bar[base + ch * n..base + (ch + 1) * n];
                for k in 0..n {
                    hs[k] = a[k] * hs[k] + bb[k] * xv;
                }
                y[bt * dd + ch] = p.readout(bt, ch, hs, xv);
            }
        }
    }
    Ok(y)
}

/// Every hidden state `h_t`, laid out like `a_bar`.
pub fn scan_states<T: Float>(p: &DiscreteSsm<T>, x: &[T], mode: ScanMode) -> Result<Vec<T>> {
    p.validate(x)?;
    Ok(match mode {
        ScanMode::Sequential => sequential_states(p, x),
        ScanMode::Parallel => parallel_states(p, x),
    })
}

/// Outputs `y_t = C_t h_t + D x_t` from precomputed states.
pub fn readout<T: Float>(p: &DiscreteSsm<T>, x: &[T], hs: &[T]) -> Result<Vec<T>> {
    p.validate(x)?;
    if hs.len() != p.a_bar.len() {
        return Err(dim_err!(
            "expected {} states, got {}",
            p.a_bar.len(),
            hs.len()
        ));
    }
    let (dd, n) = (p.channels, p.state);
    let mut y = vec![T::zero(); x.len()];
    for bt in 0..p.batch * p.len {
        for ch in 0..dd {
            let i = bt * dd + ch;
            y[i] = p.readout(bt, ch, &hs[i * n..(i + 1) * n], x[i]);
        }
    }
    Ok(y)
}

fn sequential_states<T: Float>(p: &DiscreteSsm<T>, x: &[T]) -> Vec<T> {
    let lane = p.channels * p.state;
    let mut hs = vec![T::zero(); p.a_bar.len()];
    for b in 0..p.batch {
        for t in 0..p.len {
            let bt = b * p.len + t;
            let base = bt * lane;
            for ch in 0..p.channels {
                let xv = x[bt * p.channels + ch];
                for k in 0..p.state {
                    let i = base + ch * p.state + k;
                    let prev = if t == 0 { T::zero() } else { hs[i - lane] };
                    hs[i] = p.a_bar[i] * prev + p.b_bar[i] * xv;
                }
            }
        }
    }
    hs
}

/// Composition of two affine maps `h ↦ a·h + b`, applying `first` then `second`.
#[inline]
pub fn combine<T: Float>(first: (T, T), second: (T, T)) -> (T, T) {
    (second.0 * first.0, second.0 * first.1 + second.1)
}

/// Work-efficient inclusive scan (up-sweep then down-sweep over a fixed
/// binary tree). `combine(x, y)` must be associative with `identity`
/// neutral on both sides; it need not be commutative. `scratch` is reused
/// across calls to avoid reallocating.
pub fn inclusive_scan<E: Copy>(
    items: &mut [E],
    identity: E,
    scratch: &mut Vec<E>,
    combine: impl Fn(E, E) -> E,
) {
    let n = items.len();
    if n <= 1 {
        return;
    }
    let size = n.next_power_of_two();
    scratch.clear();
    scratch.extend_from_slice(items);
    scratch.resize(size, identity);
    let tree = scratch.as_mut_slice();
    // up-sweep: each right child accumulates the reduction of its subtree
    let mut span = 1;
    while span < size {
        let step = 2 * span;
        let mut i = step - 1;
        while i < size {
            tree[i] = combine(tree[i - span], tree[i]);
            i += step;
        }
        span = step;
    }
    // down-sweep: each node ends up holding the exclusive prefix of its subtree
    tree[size - 1] = identity;
    while span > 1 {
        let half = span / 2;
        let mut i = span - 1;
        while i < size {
            let left = tree[i - half];
            tree[i - half] = tree[i];
            tree[i] = combine(tree[i], left);
            i += span;
        }
        span = half;
    }
    for (item, prefix) in items.iter_mut().zip(tree.iter()) {
        *item = combine(*prefix, *item);
    }
}

fn parallel_states<T: Float>(p: &DiscreteSsm<T>, x: &[T]) -> Vec<T> {
    let (l, dd, n) = (p.len, p.channels, p.state);
    let mut hs = vec![T::zero(); p.a_bar.len()];
    let mut lane = Vec::with_capacity(l);
    let mut scratch = Vec::with_capacity(l.next_power_of_two());
    let identity = (T::one(), T::zero());
    for b in 0..p.batch {
        for ch in 0..dd {
            for k in 0..n {
                lane.clear();
                lane.extend((0..l).map(|t| {
                    let bt = b * l + t;
                    let at = (bt * dd + ch) * n + k;
                    (p.a_bar[at], p.b_bar[at] * x[bt * dd + ch])
                }));
                inclusive_scan(&mut lane, identity, &mut scratch, combine);
                for (t, &(_, h)) in lane.iter().enumerate() {
                    hs[((b * l + t) * dd + ch) * n + k] = h;
                }
            }
        }
    }
    hs
}

/// Same result as [`sequential_scan`], computed per `(batch, channel, state)`
/// lane as a prefix combine over `(ā_t, b̄_t x_t)` pairs.
pub fn parallel_scan<T: Float>(p: &DiscreteSsm<T>, x: &[T]) -> Result<Vec<T>> {
    let hs = scan_states(p, x, ScanMode::Parallel)?;
    readout(p, x, &hs)
}

//! Pointwise arithmetic, activations, and reductions.

use crate::autograd::Var;
use crate::error::Result;
use crate::tensor::Tensor;

const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
const FRAC_1_SQRT_2: f64 = std::f64::consts::FRAC_1_SQRT_2;

pub fn gelu_scalar(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x * FRAC_1_SQRT_2))
}

fn gelu_grad(x: f64) -> f64 {
    let cdf = 0.5 * (1.0 + libm::erf(x * FRAC_1_SQRT_2));
    let pdf = 0.5 * SQRT_2_OVER_PI * (-0.5 * x * x).exp();
    cdf + x * pdf
}

pub fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn silu_scalar(x: f64) -> f64 {
    x * sigmoid_scalar(x)
}

pub fn softplus_scalar(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

fn unary<'t>(
    x: Var<'t>,
    f: impl Fn(f64) -> f64,
    df: impl Fn(f64) -> f64 + 'static,
) -> Result<Var<'t>> {
    let xv = x.value();
    let out = xv.map(f);
    let xid = x.id();
    x.tape().record(out, &[x], move |g, sink| {
        if let Some(slot) = sink.slot(xid) {
            for ((s, &gv), &xi) in slot.iter_mut().zip(g).zip(xv.data()) {
                *s += gv * df(xi);
            }
        }
    })
}

#[allow(clippy::should_implement_trait)]
impl<'t> Var<'t> {
    pub fn add(self, other: Var<'t>) -> Result<Var<'t>> {
        let out = self.value().zip_map(&other.value(), |a, b| a + b)?;
        let (a, b) = (self.id(), other.id());
        self.tape().record(out, &[self, other], move |g, sink| {
            sink.add(a, g);
            sink.add(b, g);
        })
    }

    pub fn sub(self, other: Var<'t>) -> Result<Var<'t>> {
        let out = self.value().zip_map(&other.value(), |a, b| a - b)?;
        let (a, b) = (self.id(), other.id());
        self.tape().record(out, &[self, other], move |g, sink| {
            sink.add(a, g);
            if let Some(slot) = sink.slot(b) {
                for (s, gv) in slot.iter_mut().zip(g) {
                    *s -= gv;
                }
            }
        })
    }

    pub fn mul(self, other: Var<'t>) -> Result<Var<'t>> {
        let (av, bv) = (self.value(), other.value());
        let out = av.zip_map(&bv, |a, b| a * b)?;
        let (a, b) = (self.id(), other.id());
        self.tape().record(out, &[self, other], move |g, sink| {
            if let Some(slot) = sink.slot(a) {
                for ((s, gv), y) in slot.iter_mut().zip(g).zip(bv.data()) {
                    *s += gv * y;
                }
            }
            if let Some(slot) = sink.slot(b) {
                for ((s, gv), x) in slot.iter_mut().zip(g).zip(av.data()) {
                    *s += gv * x;
                }
            }
        })
    }

    pub fn scale(self, factor: f64) -> Result<Var<'t>> {
        let out = self.value().map(|v| v * factor);
        let id = self.id();
        self.tape().record(out, &[self], move |g, sink| {
            if let Some(slot) = sink.slot(id) {
                for (s, gv) in slot.iter_mut().zip(g) {
                    *s += gv * factor;
                }
            }
        })
    }

    pub fn gelu(self) -> Result<Var<'t>> {
        unary(self, gelu_scalar, gelu_grad)
    }

    pub fn silu(self) -> Result<Var<'t>> {
        unary(self, silu_scalar, |x| {
            let s = sigmoid_scalar(x);
            s * (1.0 + x * (1.0 - s))
        })
    }

    pub fn softplus(self) -> Result<Var<'t>> {
        unary(self, softplus_scalar, sigmoid_scalar)
    }

    pub fn exp(self) -> Result<Var<'t>> {
        unary(self, f64::exp, f64::exp)
    }

    /// Sum of all entries as a scalar.
    pub fn sum(self) -> Result<Var<'t>> {
        let out = Tensor::scalar(self.value().sum());
        let id = self.id();
        self.tape().record(out, &[self], move |g, sink| {
            if let Some(slot) = sink.slot(id) {
                slot.iter_mut().for_each(|s| *s += g[0]);
            }
        })
    }

    /// Mean of all entries as a scalar.
    pub fn mean(self) -> Result<Var<'t>> {
        let n = self.value().numel() as f64;
        self.sum()?.scale(1.0 / n)
    }
}

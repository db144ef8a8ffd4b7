//! Input-selective state-space layer over `(batch, len, channels)` sequences.

use crate::autograd::Var;
use crate::error::{dim_err, Error, Result};
use crate::params::{Bound, ParamId, ParamStore};
use crate::ssm::discretize::{zoh_gain_grads_from, zoh_terms};
use crate::ssm::scan::{readout, scan_states, DiscreteSsm, ScanMode};
use crate::tensor::Tensor;

/// Lower and upper bound of the initial step size `softplus(bias)`.
const DELTA_INIT_RANGE: (f64, f64) = (1e-3, 1e-1);

/// Parameter handles of one selective SSM with `channels` inputs and a
/// diagonal state of size `state` per channel.
#[derive(Clone, Debug)]
pub struct SsmParams {
    pub channels: usize,
    pub state: usize,
    /// `A = −exp(a_log)`, shape `(channels, state)`.
    pub a_log: ParamId,
    /// `(state, channels)`, no bias.
    pub b_proj: ParamId,
    /// `(state, channels)`, no bias.
    pub c_proj: ParamId,
    /// `(channels, channels)`.
    pub delta_proj: ParamId,
    /// `(channels)`.
    pub delta_bias: ParamId,
    /// Skip gain, `(channels)`.
    pub d: ParamId,
}

impl SsmParams {
    /// Registers parameters under `prefix`. `A` starts at `−(n+1)` for state
    /// index `n`, `D` at one, and the step bias so that `softplus(bias)` is
    /// log-uniform over `[1e-3, 1e-1]`.
    pub fn register(store: &mut ParamStore, prefix: &str, channels: usize, state: usize) -> Self {
        let a_log = Tensor::from_fn(&[channels, state], |i| ((i % state) as f64 + 1.0).ln());
        let a_log = store.add(format!("{prefix}.a_log"), a_log);
        let b_proj = store.fan_in(format!("{prefix}.b_proj"), &[state, channels], channels);
        let c_proj = store.fan_in(format!("{prefix}.c_proj"), &[state, channels], channels);
        let delta_proj = store.fan_in(
            format!("{prefix}.delta_proj"),
            &[channels, channels],
            channels,
        );
        let name = format!("{prefix}.delta_bias");
        let mut rng = store.rng_for(&name);
        let (lo, hi) = (DELTA_INIT_RANGE.0.ln(), DELTA_INIT_RANGE.1.ln());
        let bias = Tensor::from_fn(&[channels], |_| {
            let step = rng.uniform(lo, hi).exp();
            // inverse softplus
            step.exp_m1().ln()
        });
        let delta_bias = store.add(name, bias);
        let d = store.full(format!("{prefix}.d"), &[channels], 1.0);
        Self {
            channels,
            state,
            a_log,
            b_proj,
            c_proj,
            delta_proj,
            delta_bias,
            d,
        }
    }

    /// Continuous evolution matrix diagonal `A`, shape `(channels, state)`.
    pub fn a(&self, store: &ParamStore) -> Tensor {
        store.get(self.a_log).map(|v| -v.exp())
    }

    /// Full layer: selective parameters followed by the scan.
    pub fn forward<'t>(&self, p: &Bound<'t>, x: Var<'t>, mode: ScanMode) -> Result<Var<'t>> {
        let terms = selective_params(p, self, x)?;
        selective_scan(
            x,
            terms.delta,
            terms.a,
            terms.b,
            terms.c,
            p.get(self.d),
            mode,
        )
    }
}

/// Continuous per-token quantities produced from the input sequence.
#[derive(Clone, Copy, Debug)]
pub struct SelectiveTerms<'t> {
    /// `(batch, len, channels)`, strictly positive.
    pub delta: Var<'t>,
    /// `(channels, state)`, strictly negative.
    pub a: Var<'t>,
    /// `(batch, len, state)`.
    pub b: Var<'t>,
    /// `(batch, len, state)`.
    pub c: Var<'t>,
}

/// `B_t = b_proj x_t`, `C_t = c_proj x_t`, `Δ_t = softplus(delta_proj x_t + bias)`.
pub fn selective_params<'t>(
    p: &Bound<'t>,
    sp: &SsmParams,
    x: Var<'t>,
) -> Result<SelectiveTerms<'t>> {
    let shape = x.shape();
    if shape.len() != 3 || shape[2] != sp.channels {
        return Err(dim_err!(
            "selective SSM expects (batch, len, {}), got {shape:?}",
            sp.channels
        ));
    }
    let delta = x
        .linear(p.get(sp.delta_proj), Some(p.get(sp.delta_bias)))?
        .softplus()?;
    let a = p.get(sp.a_log).exp()?.scale(-1.0)?;
    let b = x.linear(p.get(sp.b_proj), None)?;
    let c = x.linear(p.get(sp.c_proj), None)?;
    Ok(SelectiveTerms { delta, a, b, c })
}

struct ScanShape {
    batch: usize,
    len: usize,
    channels: usize,
    state: usize,
}

fn check_shapes(
    x: &Tensor,
    delta: &Tensor,
    a: &Tensor,
    b: &Tensor,
    c: &Tensor,
    d: &Tensor,
) -> Result<ScanShape> {
    let [batch, len, channels] = *x.shape() else {
        return Err(dim_err!(
            "scan input must be (batch, len, channels), got {:?}",
            x.shape()
        ));
    };
    let [ac, state] = *a.shape() else {
        return Err(dim_err!("A must be (channels, state), got {:?}", a.shape()));
    };
    let ok = delta.shape() == x.shape()
        && ac == channels
        && b.shape() == [batch, len, state]
        && c.shape() == [batch, len, state]
        && d.shape() == [channels];
    if !ok {
        return Err(dim_err!(
            "inconsistent scan operands: x {:?}, delta {:?}, A {:?}, B {:?}, C {:?}, D {:?}",
            x.shape(),
            delta.shape(),
            a.shape(),
            b.shape(),
            c.shape(),
            d.shape()
        ));
    }
    Ok(ScanShape {
        batch,
        len,
        channels,
        state,
    })
}

/// Zero-order-hold discretization of every token: `ā = exp(Δa)`, `b̄ = φ(Δ, a)·B`.
pub fn discretize_tokens(
    x: &Tensor,
    delta: &Tensor,
    a: &Tensor,
    b: &Tensor,
    c: &Tensor,
    d: &Tensor,
) -> Result<DiscreteSsm<f64>> {
    Ok(discretize_with_gains(x, delta, a, b, c, d)?.0)
}

/// Discretized parameters plus the input gains `φ`, laid out like `ā`.
fn discretize_with_gains(
    x: &Tensor,
    delta: &Tensor,
    a: &Tensor,
    b: &Tensor,
    c: &Tensor,
    d: &Tensor,
) -> Result<(DiscreteSsm<f64>, Vec<f64>)> {
    let s = check_shapes(x, delta, a, b, c, d)?;
    let (dd, n) = (s.channels, s.state);
    let full = s.batch * s.len * dd * n;
    let mut a_bar = Vec::with_capacity(full);
    let mut b_bar = Vec::with_capacity(full);
    let mut gains = Vec::with_capacity(full);
    for bt in 0..s.batch * s.len {
        for ch in 0..dd {
            let step = delta.data()[bt * dd + ch];
            if step.is_nan() || step <= 0.0 {
                return Err(Error::Domain(format!(
                    "step size must be positive, got {step}"
                )));
            }
            for k in 0..n {
                let (ab, phi) = zoh_terms(a.data()[ch * n + k], step);
                a_bar.push(ab);
                b_bar.push(phi * b.data()[bt * n + k]);
                gains.push(phi);
            }
        }
    }
    let disc = DiscreteSsm {
        batch: s.batch,
        len: s.len,
        channels: dd,
        state: n,
        a_bar,
        b_bar,
        c: c.data().to_vec(),
        d: d.data().to_vec(),
    };
    Ok((disc, gains))
}

/// Differentiable selective scan with `h_0 = 0`:
/// `h_t = exp(Δ_t a) ⊙ h_{t-1} + φ(Δ_t, a) B_t x_t`, `y_t = C_t h_t + d ⊙ x_t`.
///
/// Shapes: `x`, `delta` `(batch, len, channels)`; `a` `(channels, state)`;
/// `b`, `c` `(batch, len, state)`; `d` `(channels)`.
pub fn selective_scan<'t>(
    x: Var<'t>,
    delta: Var<'t>,
    a: Var<'t>,
    b: Var<'t>,
    c: Var<'t>,
    d: Var<'t>,
    mode: ScanMode,
) -> Result<Var<'t>> {
    let (xv, dv, av, bv, cv, skip) = (
        x.value(),
        delta.value(),
        a.value(),
        b.value(),
        c.value(),
        d.value(),
    );
    let (disc, gains) = discretize_with_gains(&xv, &dv, &av, &bv, &cv, &skip)?;
    let hs = scan_states(&disc, xv.data(), mode)?;
    let y = readout(&disc, xv.data(), &hs)?;
    let out = Tensor::new(xv.shape(), y)?;
    let ids = [x.id(), delta.id(), a.id(), b.id(), c.id(), d.id()];
    x.tape()
        .record(out, &[x, delta, a, b, c, d], move |gy, sink| {
            let (batch, len, dd, n) = (disc.batch, disc.len, disc.channels, disc.state);
            let mut gx = vec![0.0; xv.numel()];
            let mut gdelta = vec![0.0; dv.numel()];
            let mut ga = vec![0.0; av.numel()];
            let mut gb = vec![0.0; bv.numel()];
            let mut gc = vec![0.0; cv.numel()];
            let mut gd = vec![0.0; skip.numel()];
            let mut carry = vec![0.0; dd * n];
            for bi in 0..batch {
                carry.iter_mut().for_each(|v| *v = 0.0);
                for t in (0..len).rev() {
                    let bt = bi * len + t;
                    for ch in 0..dd {
                        let i = bt * dd + ch;
                        let (g, xi, step) = (gy[i], xv.data()[i], dv.data()[i]);
                        gd[ch] += g * xi;
                        gx[i] += g * skip.data()[ch];
                        for k in 0..n {
                            let s = i * n + k;
                            let ak = av.data()[ch * n + k];
                            let bk = bv.data()[bt * n + k];
                            let h = hs[s];
                            let h_prev = if t == 0 { 0.0 } else { hs[s - dd * n] };
                            gc[bt * n + k] += g * h;
                            // total gradient reaching h_t, including the path through h_{t+1}
                            let gh = cv.data()[bt * n + k] * g + carry[ch * n + k];
                            let a_bar = disc.a_bar[s];
                            carry[ch * n + k] = gh * a_bar;
                            let g_abar = gh * h_prev;
                            let g_bbar = gh * xi;
                            gx[i] += gh * disc.b_bar[s];
                            let phi = gains[s];
                            gb[bt * n + k] += g_bbar * phi;
                            let g_phi = g_bbar * bk;
                            let (dphi_ddelta, dphi_da) = zoh_gain_grads_from(ak, step, a_bar, phi);
                            gdelta[i] += g_abar * ak * a_bar + g_phi * dphi_ddelta;
                            ga[ch * n + k] += g_abar * step * a_bar + g_phi * dphi_da;
                        }
                    }
                }
            }
            for (id, g) in ids.iter().zip([&gx, &gdelta, &ga, &gb, &gc, &gd]) {
                sink.add(*id, g);
            }
        })
}

//! Central-difference verification of reverse-mode gradients.
//!
//! The checked computation is sum-reduced to a scalar. The reported error is
//! the maximum over the probed entries of
//! `|analytic - numeric| / max(1, |analytic|)`.

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::tensor::Tensor;

/// Checks the gradient with respect to a single input tensor.
pub fn grad_check<F>(f: F, input: &Tensor, h: f64) -> Result<f64>
where
    F: for<'t> Fn(&'t Tape, Var<'t>) -> Result<Var<'t>>,
{
    grad_check_wrt(
        |tape, vars| f(tape, vars[0]),
        std::slice::from_ref(input),
        h,
    )
}

/// Checks the gradient with respect to every entry of every input.
pub fn grad_check_wrt<F>(f: F, inputs: &[Tensor], h: f64) -> Result<f64>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    let probes: Vec<Vec<usize>> = inputs.iter().map(|t| (0..t.numel()).collect()).collect();
    check(&f, inputs, &probes, h)
}

/// Checks at most `per_input` randomly chosen entries of each input.
pub fn grad_check_sampled<F>(
    f: F,
    inputs: &[Tensor],
    h: f64,
    per_input: usize,
    seed: u64,
) -> Result<f64>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    let mut rng = SeededRng::new(seed);
    let probes: Vec<Vec<usize>> = inputs
        .iter()
        .map(|t| {
            let mut idx = rng.permutation(t.numel());
            idx.truncate(per_input);
            idx
        })
        .collect();
    check(&f, inputs, &probes, h)
}

fn eval<F>(f: &F, inputs: &[Tensor]) -> Result<f64>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    let tape = Tape::new();
    let vars: Vec<Var<'_>> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
    let out = f(&tape, &vars)?.value().sum();
    if !out.is_finite() {
        return Err(Error::Numerical(
            "non-finite value during finite differencing".into(),
        ));
    }
    Ok(out)
}

fn check<F>(f: &F, inputs: &[Tensor], probes: &[Vec<usize>], h: f64) -> Result<f64>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    let analytic: Vec<Tensor> = {
        let tape = Tape::new();
        let vars: Vec<Var<'_>> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
        let out = f(&tape, &vars)?;
        let grads = tape.backward(out)?;
        vars.iter()
            .map(|&v| grads.get(v).expect("leaf gradient"))
            .collect()
    };
    let mut worst = 0.0f64;
    let mut shifted = inputs.to_vec();
    for (k, idx) in probes.iter().enumerate() {
        for &i in idx {
            let orig = inputs[k].data()[i];
            shifted[k].data_mut()[i] = orig + h;
            let plus = eval(f, &shifted)?;
            shifted[k].data_mut()[i] = orig - h;
            let minus = eval(f, &shifted)?;
            shifted[k].data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            let a = analytic[k].data()[i];
            worst = worst.max((a - numeric).abs() / a.abs().max(1.0));
        }
    }
    Ok(worst)
}

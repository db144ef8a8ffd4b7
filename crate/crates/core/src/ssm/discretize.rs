//! Zero-order-hold discretization of a diagonal state-space model.
//!
//! For one diagonal entry `a` and step `Δ`:
//!
//! ```text
//! ā = exp(Δa)
//! b̄ = (Δa)⁻¹ (exp(Δa) − 1) · Δb = φ(Δ, a) · b,   φ = expm1(Δa) / a
//! ```

use crate::error::{Error, Result};

/// Below this `|Δa|` the input gain uses its Taylor expansion.
pub const SERIES_THRESHOLD: f64 = 1e-6;
/// Below this `|Δa|` the gain's `a`-derivative uses its Taylor expansion.
const DERIV_SERIES_THRESHOLD: f64 = 1e-3;

/// `(ā, φ)` with `b̄ = φ · b`.
#[inline]
pub fn zoh_terms(a: f64, delta: f64) -> (f64, f64) {
    let x = delta * a;
    if x.abs() < SERIES_THRESHOLD {
        (x.exp(), delta * (1.0 + x / 2.0 + x * x / 6.0))
    } else {
        (x.exp(), x.exp_m1() / a)
    }
}

/// Exact-branch input gain, no series fallback. Exposed for branch agreement checks.
pub fn zoh_gain_exact(a: f64, delta: f64) -> f64 {
    (delta * a).exp_m1() / a
}

/// Series-branch input gain. Exposed for branch agreement checks.
pub fn zoh_gain_series(a: f64, delta: f64) -> f64 {
    let x = delta * a;
    delta * (1.0 + x / 2.0 + x * x / 6.0)
}

/// Partial derivatives `(∂φ/∂Δ, ∂φ/∂a)` of the input gain.
#[inline]
pub fn zoh_gain_grads(a: f64, delta: f64) -> (f64, f64) {
    let x = delta * a;
    let d_delta = x.exp();
    let d_a = if x.abs() < DERIV_SERIES_THRESHOLD {
        // Δ² (1/2 + x/3 + x²/8 + x³/30)
        delta * delta * (0.5 + x / 3.0 + x * x / 8.0 + x * x * x / 30.0)
    } else {
        (x * x.exp() - x.exp_m1()) / (a * a)
    };
    (d_delta, d_a)
}

/// As [`zoh_gain_grads`], reusing `ā = exp(Δa)` and `φ` from [`zoh_terms`].
#[inline]
pub fn zoh_gain_grads_from(a: f64, delta: f64, a_bar: f64, phi: f64) -> (f64, f64) {
    let x = delta * a;
    let d_a = if x.abs() < DERIV_SERIES_THRESHOLD {
        delta * delta * (0.5 + x / 3.0 + x * x / 8.0 + x * x * x / 30.0)
    } else {
        (delta * a_bar - phi) / a
    };
    (a_bar, d_a)
}

/// Discretizes one `(a, Δ, b)` triple into `(ā, b̄)`.
pub fn zoh_discretize(a: f64, delta: f64, b: f64) -> Result<(f64, f64)> {
    if delta.is_nan() || delta <= 0.0 {
        return Err(Error::Domain(format!(
            "step size must be positive, got {delta}"
        )));
    }
    if !a.is_finite() || !b.is_finite() {
        return Err(Error::Domain(format!(
            "non-finite state parameters a={a}, b={b}"
        )));
    }
    let (a_bar, phi) = zoh_terms(a, delta);
    Ok((a_bar, phi * b))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn half_life_case() {
        let (a_bar, b_bar) = zoh_discretize(-1.0, std::f64::consts::LN_2, 1.0).unwrap();
        assert!((a_bar - 0.5).abs() < 1e-12);
        assert!((b_bar - 0.5).abs() < 1e-12);
    }

    #[test]
    fn scalar_oracle() {
        let (a_bar, b_bar) = zoh_discretize(-2.0, 1.0, 3.0).unwrap();
        let e = (-2.0f64).exp();
        assert!((a_bar - e).abs() < 1e-15);
        assert!((b_bar - (e - 1.0) / -2.0 * 3.0).abs() < 1e-14);
        assert!((b_bar - 1.296_997_075_145_081).abs() < 1e-12);
    }

    #[test]
    fn vanishing_step_limit() {
        for delta in [1e-3, 1e-6, 1e-9, 1e-12] {
            let (a_bar, b_bar) = zoh_discretize(-1.0, delta, 1.0).unwrap();
            assert!((a_bar - 1.0).abs() <= 2.0 * delta);
            assert!((b_bar / delta - 1.0).abs() <= delta);
        }
    }

    #[test]
    fn non_positive_step_is_domain_error() {
        for delta in [0.0, -1.0, f64::NAN] {
            assert!(matches!(
                zoh_discretize(-1.0, delta, 1.0),
                Err(Error::Domain(_))
            ));
        }
    }

    #[test]
    fn series_matches_exact_at_threshold() {
        for (a, delta) in [(-1.0, 1e-6), (-1e-3, 1e-3), (-2.0, 5e-7), (-1.0, 9.99e-7)] {
            let exact = zoh_gain_exact(a, delta);
            let series = zoh_gain_series(a, delta);
            assert!(
                ((exact - series) / exact).abs() <= 1e-8,
                "a={a} delta={delta}"
            );
        }
    }

    #[test]
    fn reused_terms_match_direct_derivatives() {
        for (a, delta) in [
            (-1.0, 0.5),
            (-3.0, 0.01),
            (-1.0, 1e-4),
            (-0.5, 2.0),
            (-8.0, 0.1),
        ] {
            let (a_bar, phi) = zoh_terms(a, delta);
            let (d0, a0) = zoh_gain_grads(a, delta);
            let (d1, a1) = zoh_gain_grads_from(a, delta, a_bar, phi);
            assert!((d0 - d1).abs() <= 1e-15 * d0.abs().max(1.0));
            assert!((a0 - a1).abs() <= 1e-9 * a0.abs(), "{a0} {a1}");
        }
    }

    #[test]
    fn gain_derivatives_match_finite_differences() {
        for (a, delta) in [(-1.0, 0.5), (-3.0, 0.01), (-1.0, 1e-4), (-0.5, 2.0)] {
            let (dd, da) = zoh_gain_grads(a, delta);
            let h = 1e-6;
            let phi = |a: f64, d: f64| zoh_terms(a, d).1;
            let nd = (phi(a, delta + h * delta) - phi(a, delta - h * delta)) / (2.0 * h * delta);
            let ha = 1e-3 * a.abs();
            let na = (phi(a + ha, delta) - phi(a - ha, delta)) / (2.0 * ha);
            assert!((dd - nd).abs() <= 1e-6 * dd.abs().max(1.0));
            assert!(
                (da - na).abs() <= 1e-6 * da.abs().max(delta * delta),
                "a={a} delta={delta}: {da} vs {na}"
            );
        }
    }
}

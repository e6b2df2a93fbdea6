//! Special functions.

use crate::error::{Error, Result};

/// Coefficients `B_{2k} / (2k)` of the digamma asymptotic series, k = 1..7.
const ASYMPTOTIC: [f64; 7] = [
    1.0 / 12.0,
    -1.0 / 120.0,
    1.0 / 252.0,
    -1.0 / 240.0,
    1.0 / 132.0,
    -691.0 / 32760.0,
    1.0 / 12.0,
];

/// Below this the recurrence shifts the argument upward before the series.
const SHIFT_TO: f64 = 10.0;

/// Digamma function ψ(x) for `x > 0`.
///
/// Shifts small arguments upward with `ψ(x) = ψ(x + 1) - 1/x`, then
/// evaluates `ln x - 1/(2x) - Σ B_{2k} / (2k x^{2k})`. Absolute error is
/// below 1e-10 on `[1e-3, 1e9]`.
pub fn digamma(x: f64) -> Result<f64> {
    if !(x > 0.0) || !x.is_finite() {
        return Err(Error::Domain(format!(
            "digamma needs a positive finite argument, got {x}"
        )));
    }
    Ok(digamma_unchecked(x))
}

/// Digamma without the domain check, for hot loops over integer counts.
#[inline]
pub(crate) fn digamma_unchecked(mut x: f64) -> f64 {
    let mut acc = 0.0;
    while x < SHIFT_TO {
        acc -= 1.0 / x;
        x += 1.0;
    }
    let inv2 = 1.0 / (x * x);
    // Horner over the series in 1/x^2.
    let series = ASYMPTOTIC.iter().rev().fold(0.0, |s, &c| (s + c) * inv2);
    acc + x.ln() - 0.5 / x - series
}

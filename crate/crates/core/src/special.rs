//! Digamma and trigamma for positive arguments.

use crate::math::log;
use crate::{Error, Result};

const SHIFT_THRESHOLD: f64 = 10.0;

/// `B_{2k} / (2k)` for k = 1..7.
const DIGAMMA_ASYMP: [f64; 7] = [
    1.0 / 12.0,
    -1.0 / 120.0,
    1.0 / 252.0,
    -1.0 / 240.0,
    1.0 / 132.0,
    -691.0 / 32760.0,
    1.0 / 12.0,
];

/// `B_{2k}` for k = 1..7.
const TRIGAMMA_ASYMP: [f64; 7] = [
    1.0 / 6.0,
    -1.0 / 30.0,
    1.0 / 42.0,
    -1.0 / 30.0,
    5.0 / 66.0,
    -691.0 / 2730.0,
    7.0 / 6.0,
];

fn check(x: f64) -> Result<()> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(alloc::format!(
            "argument must be positive and finite, got {x}"
        )))
    }
}

/// `psi(x) = d/dx ln Gamma(x)`: upward recurrence, then the asymptotic series.
pub fn digamma(x: f64) -> Result<f64> {
    check(x)?;
    let mut acc = 0.0;
    let mut z = x;
    while z < SHIFT_THRESHOLD {
        acc -= 1.0 / z;
        z += 1.0;
    }
    let inv2 = 1.0 / (z * z);
    let mut series = 0.0;
    let mut pow = inv2;
    for c in DIGAMMA_ASYMP {
        series += c * pow;
        pow *= inv2;
    }
    Ok(acc + log(z) - 0.5 / z - series)
}

/// `psi_1(x) = d^2/dx^2 ln Gamma(x)`.
pub fn trigamma(x: f64) -> Result<f64> {
    check(x)?;
    let mut acc = 0.0;
    let mut z = x;
    while z < SHIFT_THRESHOLD {
        acc += 1.0 / (z * z);
        z += 1.0;
    }
    let inv = 1.0 / z;
    let inv2 = inv * inv;
    let mut series = 0.0;
    let mut pow = inv2 * inv;
    for b in TRIGAMMA_ASYMP {
        series += b * pow;
        pow *= inv2;
    }
    Ok(acc + inv + 0.5 * inv2 + series)
}

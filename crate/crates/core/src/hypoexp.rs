//! Sums of independent exponential holding times.
//!
//! The CDF of `H_1 + .. + H_r` with `H_i ~ Exp(lambda_i)` has the partial
//! fraction form
//!
//! ```text
//! F(y) = sum_i  prod_{j != i} lambda_j / (lambda_j - lambda_i) * (1 - exp(-lambda_i y))
//! ```
//!
//! which cancels catastrophically when two rates nearly coincide or `y` is
//! small. [`hypoexp_cdf`] uses it only when the estimated cancellation keeps
//! the result accurate, and otherwise falls back to uniformization: the phase
//! process is embedded in a Poisson clock of rate `max lambda`, and the
//! occupancy of each phase is a mixture of positive terms.

use alloc::vec;
use alloc::vec::Vec;

use crate::math::{exp, expm1, fabs, log, sqrt};
use crate::{Error, Result};

/// Largest tolerated ratio between the sum of absolute partial-fraction terms
/// and the result; beyond it the closed form loses more than ~4 digits.
const MAX_CANCELLATION: f64 = 1e4;

fn check_rates(rates: &[f64]) -> Result<()> {
    match rates.iter().find(|&&l| !(l > 0.0) || !l.is_finite()) {
        Some(&l) => Err(Error::InvalidArgument(alloc::format!(
            "rates must be positive and finite, got {l}"
        ))),
        None => Ok(()),
    }
}

/// Partial-fraction evaluation. Returns the value and the sum of absolute
/// term magnitudes (a cancellation gauge); the gauge is infinite when two
/// rates coincide.
pub fn hypoexp_cdf_closed_form(y: f64, rates: &[f64]) -> (f64, f64) {
    let mut value = 0.0;
    let mut gauge = 0.0;
    for (i, &li) in rates.iter().enumerate() {
        let mut coeff = 1.0;
        for (j, &lj) in rates.iter().enumerate() {
            if j != i {
                coeff *= lj / (lj - li);
            }
        }
        let term = coeff * -expm1(-li * y);
        value += term;
        gauge += fabs(term);
    }
    if !gauge.is_finite() {
        gauge = f64::INFINITY;
    }
    (value, gauge)
}

/// Probability of having completed exactly `j` phases by time `y`, for
/// `j = 0..=r`; entry `r` is the CDF of the full sum.
pub fn phase_occupancy(y: f64, rates: &[f64]) -> Vec<f64> {
    let r = rates.len();
    let mut out = vec![0.0; r + 1];
    if r == 0 || y <= 0.0 {
        out[0] = 1.0;
        return out;
    }
    let lam_max = rates.iter().cloned().fold(0.0, f64::max);
    let a = lam_max * y;
    let advance: Vec<f64> = rates.iter().map(|&l| l / lam_max).collect();
    let mut v = vec![0.0; r + 1];
    v[0] = 1.0;
    let k_max = (a + 12.0 * sqrt(a) + 40.0) as usize;
    let ln_a = log(a);
    let mut log_w = -a;
    for k in 0..=k_max {
        let w = exp(log_w);
        if w > 0.0 {
            for (o, &p) in out.iter_mut().zip(&v) {
                *o += w * p;
            }
        }
        for i in (0..r).rev() {
            let moved = v[i] * advance[i];
            v[i + 1] += moved;
            v[i] -= moved;
        }
        log_w += ln_a - log((k + 1) as f64);
    }
    for o in out.iter_mut() {
        *o = o.clamp(0.0, 1.0);
    }
    out
}

/// CDF at `y` of a sum of independent exponentials with the given rates.
/// An empty rate list is the point mass at zero.
pub fn hypoexp_cdf(y: f64, rates: &[f64]) -> Result<f64> {
    check_rates(rates)?;
    if !(y >= 0.0) {
        return Err(Error::InvalidArgument(alloc::format!(
            "time must be nonnegative, got {y}"
        )));
    }
    if rates.is_empty() || y == f64::INFINITY {
        return Ok(1.0);
    }
    if y == 0.0 {
        return Ok(0.0);
    }
    let (value, gauge) = hypoexp_cdf_closed_form(y, rates);
    if gauge.is_finite() && value > 0.0 && gauge <= MAX_CANCELLATION * value {
        return Ok(value.clamp(0.0, 1.0));
    }
    Ok(phase_occupancy(y, rates)[rates.len()])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_rate_is_exponential() {
        for &(l, y) in &[(0.3, 2.0), (1.0, 1.0), (5.0, 0.01)] {
            let f = hypoexp_cdf(y, &[l]).unwrap();
            assert!((f - (1.0 - exp(-l * y))).abs() < 1e-15);
        }
    }

    #[test]
    fn two_distinct_rates() {
        let f = hypoexp_cdf(1.0, &[1.0, 2.0]).unwrap();
        let expected = 2.0 * (1.0 - exp(-1.0)) - (1.0 - exp(-2.0));
        assert!((f - 0.399_576_400_893_728_03).abs() < 1e-14);
        assert!((f - expected).abs() < 1e-15);
    }

    #[test]
    fn erlang_limit() {
        let f = hypoexp_cdf(1.0, &[1.0, 1.0 + 1e-9]).unwrap();
        assert!((f - (1.0 - 2.0 * exp(-1.0))).abs() < 1e-6);
        let g = hypoexp_cdf(1.0, &[1.0, 1.0]).unwrap();
        assert!((g - (1.0 - 2.0 * exp(-1.0))).abs() < 1e-13);
    }

    #[test]
    fn occupancy_sums_to_one() {
        let occ = phase_occupancy(2.5, &[0.7, 1.9, 0.7, 3.0]);
        assert!((occ.iter().sum::<f64>() - 1.0).abs() < 1e-13);
        assert!((occ[0] - exp(-0.7 * 2.5)).abs() < 1e-15);
    }

    #[test]
    fn empty_and_edge_cases() {
        assert_eq!(hypoexp_cdf(0.3, &[]).unwrap(), 1.0);
        assert_eq!(hypoexp_cdf(0.0, &[1.0]).unwrap(), 0.0);
        assert!(hypoexp_cdf(1.0, &[1.0, 0.0]).is_err());
        assert!(hypoexp_cdf(-1.0, &[1.0]).is_err());
    }
}

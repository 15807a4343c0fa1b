//! Standard normal helpers used across the estimator and the oracles.

use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::erf::erfc;
use std::f64::consts::{FRAC_1_SQRT_2, PI};

/// 1/sqrt(2*pi)
pub const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

#[inline]
pub fn pdf(x: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * x * x).exp()
}

/// Derivative of the standard normal density.
#[inline]
pub fn pdf_prime(x: f64) -> f64 {
    -x * pdf(x)
}

#[inline]
pub fn cdf(x: f64) -> f64 {
    0.5 * erfc(-x * FRAC_1_SQRT_2)
}

/// Upper tail 1 - cdf(x), accurate for large positive x.
#[inline]
pub fn sf(x: f64) -> f64 {
    0.5 * erfc(x * FRAC_1_SQRT_2)
}

pub fn inverse_cdf(p: f64) -> f64 {
    // Normal::new(0, 1) cannot fail.
    Normal::new(0.0, 1.0).unwrap().inverse_cdf(p)
}

/// Density of N(0, sd^2).
#[inline]
pub fn pdf_scaled(x: f64, sd: f64) -> f64 {
    pdf(x / sd) / sd
}

/// Integral of the squared standard normal density, 1/(2 sqrt(pi)).
pub fn pdf_squared_integral() -> f64 {
    1.0 / (2.0 * PI.sqrt())
}

/// Two-sided critical value of a standard normal at confidence `level`.
pub fn two_sided_critical(level: f64) -> f64 {
    inverse_cdf(0.5 + 0.5 * level)
}

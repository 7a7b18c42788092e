//! Normal distribution helpers with accurate tails.

use statrs::distribution::{ContinuousCDF, Normal};
use std::f64::consts::{FRAC_1_SQRT_2, PI};

/// Standard normal density.
pub fn norm_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

/// `Φ(x)`, accurate in the lower tail.
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * statrs::function::erf::erfc(-x * FRAC_1_SQRT_2)
}

/// `1 - Φ(x)`, accurate in the upper tail.
pub fn norm_sf(x: f64) -> f64 {
    0.5 * statrs::function::erf::erfc(x * FRAC_1_SQRT_2)
}

/// `Φ^{-1}(p)` for `p` in `(0, 1)`.
pub fn norm_inv_cdf(p: f64) -> f64 {
    let n = Normal::standard();
    n.inverse_cdf(p.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0))
}

pub fn gamma(x: f64) -> f64 {
    statrs::function::gamma::gamma(x)
}

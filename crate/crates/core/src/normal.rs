//! Gaussian density and interval masses, accurate in both tails.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

pub fn pdf(x: f64, mean: f64, std: f64) -> f64 {
    let z = (x - mean) / std;
    (-0.5 * z * z).exp() / (std * (2.0 * PI).sqrt())
}

#[cfg(test)]
pub fn cdf(x: f64, mean: f64, std: f64) -> f64 {
    0.5 * libm::erfc(-(x - mean) / std * FRAC_1_SQRT_2)
}

/// Probability that N(mean, std²) falls in [lo, hi).
///
/// Differences are taken on the tail closest to the interval so that
/// far-tail masses keep their relative precision.
pub fn interval_mass(lo: f64, hi: f64, mean: f64, std: f64) -> f64 {
    if hi <= lo {
        return 0.0;
    }
    let za = (lo - mean) / std * FRAC_1_SQRT_2;
    let zb = (hi - mean) / std * FRAC_1_SQRT_2;
    let mass = if za >= 0.0 {
        0.5 * (libm::erfc(za) - libm::erfc(zb))
    } else if zb <= 0.0 {
        0.5 * (libm::erfc(-zb) - libm::erfc(-za))
    } else {
        1.0 - 0.5 * libm::erfc(-za) - 0.5 * libm::erfc(zb)
    };
    mass.max(0.0)
}

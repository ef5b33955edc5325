//! Standard normal helpers used across the crate.

use libm::erfc;
use statrs::function::erf::erfc_inv;
use std::f64::consts::{FRAC_1_SQRT_2, PI, SQRT_2};

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

pub fn norm_pdf(x: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * x * x).exp()
}

pub fn norm_cdf(x: f64) -> f64 {
    0.5 * erfc(-x * FRAC_1_SQRT_2)
}

/// Upper tail `1 - Φ(x)` without cancellation.
pub fn norm_sf(x: f64) -> f64 {
    0.5 * erfc(x * FRAC_1_SQRT_2)
}

/// Inverse of the standard normal CDF on (0, 1).
pub fn norm_quantile(p: f64) -> f64 {
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    let z = -SQRT_2 * erfc_inv(2.0 * p);
    // one Newton step against the erfc-based CDF
    let resid = if z < 0.0 {
        norm_cdf(z) - p
    } else {
        (1.0 - p) - norm_sf(z)
    };
    z - resid / norm_pdf(z)
}

/// Φ⁻¹ evaluated from the upper-tail probability `q = 1 - p`.
pub fn norm_quantile_upper(q: f64) -> f64 {
    -norm_quantile(q)
}

/// Mills ratio `(1 - Φ(x)) / ϕ(x)` for `x ≥ 0`, stable for large `x`.
pub fn mills_ratio(x: f64) -> f64 {
    if x < 30.0 {
        return norm_sf(x) / norm_pdf(x);
    }
    // Lentz continued fraction: R(x) = 1/(x + 1/(x + 2/(x + 3/(x + ...))))
    let tiny = 1e-300;
    let mut f = x;
    let mut c = x;
    let mut d = 0.0;
    for k in 1..200 {
        let a = k as f64;
        d = x + a * d;
        if d.abs() < tiny {
            d = tiny;
        }
        c = x + a / c;
        if c.abs() < tiny {
            c = tiny;
        }
        d = 1.0 / d;
        let delta = c * d;
        f *= delta;
        if (delta - 1.0).abs() < 1e-16 {
            break;
        }
    }
    1.0 / f
}

pub fn ln_sqrt_2pi() -> f64 {
    0.5 * (2.0 * PI).ln()
}

pub use statrs::function::gamma::{gamma, ln_gamma};

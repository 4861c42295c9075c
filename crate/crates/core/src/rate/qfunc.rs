//! Gaussian tail function and its inverse.

use statrs::function::erf::erfc;

use super::RateError;

/// `Q(x) = P[N(0,1) > x]`.
pub fn qfunc(x: f64) -> f64 {
    0.5 * erfc(x / std::f64::consts::SQRT_2)
}

/// Inverse of [`qfunc`] on `(0, 0.5]`.
///
/// Bisection on a bracket that is widened until it contains the root, run
/// until the bracket collapses to adjacent floats.
pub fn qfunc_inv(p: f64) -> Result<f64, RateError> {
    if !(p > 0.0 && p <= 0.5) {
        return Err(RateError::ProbabilityOutOfRange(p));
    }
    if p == 0.5 {
        return Ok(0.0);
    }
    let mut lo = 0.0;
    let mut hi = 1.0;
    while qfunc(hi) > p {
        lo = hi;
        hi *= 2.0;
    }
    loop {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if qfunc(mid) > p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    // Pick whichever end reproduces p more closely.
    if (qfunc(lo) - p).abs() <= (qfunc(hi) - p).abs() {
        Ok(lo)
    } else {
        Ok(hi)
    }
}

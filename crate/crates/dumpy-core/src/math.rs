//! Scalar float helpers backed by `libm` so the crate stays `no_std`.

#[cfg(test)]
pub(crate) use libm::fabs;
pub(crate) use libm::{ceil, exp, exp2, floor, log2, sqrt};

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x / core::f64::consts::SQRT_2))
}

/// Inverse standard normal CDF by bisection on the erf-based CDF.
///
/// Converges to an interval of width 1e-10, which is far below the spacing
/// of any breakpoint table this crate produces.
pub fn normal_quantile(p: f64) -> f64 {
    assert!(p > 0.0 && p < 1.0, "quantile argument must be in (0, 1)");
    let (mut lo, mut hi) = (-10.0_f64, 10.0_f64);
    while hi - lo > 1e-10 {
        let mid = 0.5 * (lo + hi);
        if normal_cdf(mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

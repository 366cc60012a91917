//! Exact distances (ED, banded DTW) and the lower-bounding distances used
//! for pruning: pointwise envelope bounds and iSAX-region bounds.
//!
//! Squared values are carried internally; roots are taken at the API edges
//! only. ED accumulates strictly left to right so results are reproducible
//! bit for bit across runs and worker counts.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::CoreError;
use crate::math;
use crate::series::{Breakpoints, IsaxWord};

/// Distance measure selector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DistanceKind {
    Ed,
    /// Constrained DTW with a Sakoe-Chiba band of half-width
    /// `ceil(window_ratio * n)`.
    Dtw {
        window_ratio: f64,
    },
}

impl DistanceKind {
    pub const DEFAULT_WINDOW_RATIO: f64 = 0.10;

    pub fn dtw_default() -> Self {
        DistanceKind::Dtw {
            window_ratio: Self::DEFAULT_WINDOW_RATIO,
        }
    }
}

/// Sakoe-Chiba half-width for a series of length `n`. Rounds up: a wider
/// band only loosens the constraint and never breaks a lower bound.
pub fn band_radius(n: usize, window_ratio: f64) -> usize {
    math::ceil(window_ratio * n as f64) as usize
}

/// Euclidean distance.
pub fn ed(a: &[f64], b: &[f64]) -> Result<f64, CoreError> {
    Ok(math::sqrt(ed_squared(a, b)?))
}

/// Squared Euclidean distance with fixed left-to-right summation.
pub fn ed_squared(a: &[f64], b: &[f64]) -> Result<f64, CoreError> {
    if a.len() != b.len() {
        return Err(CoreError::InvalidArgument("series lengths differ"));
    }
    let mut sum = 0.0;
    for i in 0..a.len() {
        let d = a[i] - b[i];
        sum += d * d;
    }
    Ok(sum)
}

/// Squared ED with a running-sum cutoff: returns `None` once the partial sum
/// exceeds `cutoff_sq` (the true value is then strictly greater). When `Some`
/// is returned it is identical to [`ed_squared`].
pub fn ed_squared_with_cutoff(a: &[f64], b: &[f64], cutoff_sq: f64) -> Option<f64> {
    debug_assert_eq!(a.len(), b.len());
    let mut sum = 0.0;
    for i in 0..a.len() {
        let d = a[i] - b[i];
        sum += d * d;
        if sum > cutoff_sq {
            return None;
        }
    }
    Some(sum)
}

/// Banded DTW distance with squared pointwise cost.
pub fn dtw(a: &[f64], b: &[f64], window_ratio: f64) -> Result<f64, CoreError> {
    if a.len() != b.len() {
        return Err(CoreError::InvalidArgument("series lengths differ"));
    }
    if a.is_empty() {
        return Err(CoreError::InvalidArgument("cannot warp empty series"));
    }
    let r = band_radius(a.len(), window_ratio);
    let sq =
        dtw_squared_banded(a, b, r, f64::INFINITY).expect("no cutoff given, DTW cannot abandon");
    Ok(math::sqrt(sq))
}

/// Banded squared DTW with early abandoning: returns `None` once every cell
/// of a DP row exceeds `cutoff_sq`.
pub fn dtw_squared_banded(a: &[f64], b: &[f64], radius: usize, cutoff_sq: f64) -> Option<f64> {
    let n = a.len();
    debug_assert_eq!(n, b.len());
    let mut prev = vec![f64::INFINITY; n];
    let mut curr = vec![f64::INFINITY; n];
    for i in 0..n {
        let lo = i.saturating_sub(radius);
        let hi = (i + radius).min(n - 1);
        let mut row_min = f64::INFINITY;
        for j in lo..=hi {
            let d = a[i] - b[j];
            let cost = d * d;
            let best = if i == 0 && j == 0 {
                0.0
            } else {
                let mut m = f64::INFINITY;
                if i > 0 {
                    m = m.min(prev[j]);
                    if j > 0 {
                        m = m.min(prev[j - 1]);
                    }
                }
                if j > lo {
                    m = m.min(curr[j - 1]);
                }
                m
            };
            curr[j] = cost + best;
            row_min = row_min.min(curr[j]);
        }
        if row_min > cutoff_sq {
            return None;
        }
        core::mem::swap(&mut prev, &mut curr);
        for v in curr.iter_mut() {
            *v = f64::INFINITY;
        }
    }
    Some(prev[n - 1])
}

/// Warping envelope of a query: pointwise min/max over the band window.
#[derive(Debug, Clone, PartialEq)]
pub struct Envelope {
    pub upper: Vec<f64>,
    pub lower: Vec<f64>,
    pub radius: usize,
}

impl Envelope {
    pub fn new(query: &[f64], radius: usize) -> Self {
        let n = query.len();
        let mut upper = Vec::with_capacity(n);
        let mut lower = Vec::with_capacity(n);
        for i in 0..n {
            let lo = i.saturating_sub(radius);
            let hi = (i + radius).min(n - 1);
            let window = &query[lo..=hi];
            upper.push(window.iter().copied().fold(f64::NEG_INFINITY, f64::max));
            lower.push(window.iter().copied().fold(f64::INFINITY, f64::min));
        }
        Self {
            upper,
            lower,
            radius,
        }
    }

    /// Per-segment means of both envelope lines, for the iSAX DTW bound.
    pub fn paa_means(&self, w: usize) -> Result<(Vec<f64>, Vec<f64>), CoreError> {
        Ok((
            crate::series::paa(&self.upper, w)?,
            crate::series::paa(&self.lower, w)?,
        ))
    }
}

/// Squared pointwise envelope bound (a lower bound on squared banded DTW),
/// with a running-sum cutoff like [`ed_squared_with_cutoff`].
pub fn lb_keogh_squared_with_cutoff(env: &Envelope, s: &[f64], cutoff_sq: f64) -> Option<f64> {
    debug_assert_eq!(env.upper.len(), s.len());
    let mut sum = 0.0;
    for i in 0..s.len() {
        let v = s[i];
        let d = if v > env.upper[i] {
            v - env.upper[i]
        } else if v < env.lower[i] {
            env.lower[i] - v
        } else {
            0.0
        };
        sum += d * d;
        if sum > cutoff_sq {
            return None;
        }
    }
    Some(sum)
}

fn interval_gap(value: f64, lo: f64, hi: f64) -> f64 {
    if value < lo {
        lo - value
    } else if value > hi {
        value - hi
    } else {
        0.0
    }
}

/// Squared iSAX lower bound on ED between a query (via its PAA) and every
/// series covered by `node`. Wildcard segments contribute zero.
pub fn lb_isax_ed_squared(
    query_paa: &[f64],
    node: &IsaxWord,
    breakpoints: &Breakpoints,
    n: usize,
) -> f64 {
    let w = query_paa.len();
    debug_assert_eq!(w, node.segment_count());
    let mut sum = 0.0;
    for (seg, &p) in query_paa.iter().enumerate() {
        let s = node.symbol(seg);
        if s.depth == 0 {
            continue;
        }
        let (lo, hi) = breakpoints.interval(s.code, s.depth);
        let gap = interval_gap(p, lo, hi);
        sum += gap * gap;
    }
    sum * (n as f64 / w as f64)
}

/// iSAX lower bound on ED. See [`lb_isax_ed_squared`].
pub fn lb_isax_ed(query_paa: &[f64], node: &IsaxWord, breakpoints: &Breakpoints, n: usize) -> f64 {
    math::sqrt(lb_isax_ed_squared(query_paa, node, breakpoints, n))
}

/// Squared iSAX lower bound on banded DTW: per segment the gap between the
/// node's value interval and the segment means of the query envelope,
/// counted only when the two intervals are disjoint.
pub fn lb_isax_dtw_squared(
    env_upper_paa: &[f64],
    env_lower_paa: &[f64],
    node: &IsaxWord,
    breakpoints: &Breakpoints,
    n: usize,
) -> f64 {
    let w = env_upper_paa.len();
    debug_assert_eq!(w, node.segment_count());
    let mut sum = 0.0;
    for seg in 0..w {
        let s = node.symbol(seg);
        if s.depth == 0 {
            continue;
        }
        let (lo, hi) = breakpoints.interval(s.code, s.depth);
        let gap = if lo > env_upper_paa[seg] {
            lo - env_upper_paa[seg]
        } else if hi < env_lower_paa[seg] {
            env_lower_paa[seg] - hi
        } else {
            0.0
        };
        sum += gap * gap;
    }
    sum * (n as f64 / w as f64)
}

/// iSAX lower bound on banded DTW. See [`lb_isax_dtw_squared`].
pub fn lb_isax_dtw(
    env_upper_paa: &[f64],
    env_lower_paa: &[f64],
    node: &IsaxWord,
    breakpoints: &Breakpoints,
    n: usize,
) -> f64 {
    math::sqrt(lb_isax_dtw_squared(
        env_upper_paa,
        env_lower_paa,
        node,
        breakpoints,
        n,
    ))
}

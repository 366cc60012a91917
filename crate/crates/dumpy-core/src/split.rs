//! Adaptive node splitting: given the SAX rows of an overfull node, pick the
//! chosen-segment list that maximizes a proximity-compactness objective.
//!
//! The search applies three speedups: per-segment variances are precomputed
//! and summed per plan, the admissible fanout range is bounded by an average
//! fill-factor window, and child-size distributions are derived by
//! marginalizing a single full-fanout base histogram instead of recounting
//! rows per plan.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::CoreError;
use crate::math;
use crate::series::{Breakpoints, IsaxWord, Sid};

/// Borrowed view of a flat SAX table: row `i` is `w` symbol bytes.
#[derive(Debug, Clone, Copy)]
pub struct SaxRows<'a> {
    data: &'a [u8],
    w: usize,
}

impl<'a> SaxRows<'a> {
    pub fn new(data: &'a [u8], w: usize) -> Self {
        debug_assert!(w > 0 && data.len() % w == 0);
        Self { data, w }
    }

    pub fn segment_count(&self) -> usize {
        self.w
    }

    pub fn row_count(&self) -> usize {
        self.data.len() / self.w
    }

    #[inline]
    pub fn row(&self, ordinal: u32) -> &'a [u8] {
        let start = ordinal as usize * self.w;
        &self.data[start..start + self.w]
    }
}

/// Tunables of the split objective.
#[derive(Debug, Clone, Copy)]
pub struct SplitParams {
    /// Leaf size threshold.
    pub th: usize,
    /// Lower bound on the average child fill factor.
    pub f_l: f64,
    /// Upper bound on the average child fill factor.
    pub f_r: f64,
    /// Weight of the compactness term.
    pub alpha: f64,
}

impl Default for SplitParams {
    fn default() -> Self {
        Self {
            th: 10_000,
            f_l: 0.5,
            f_r: 3.0,
            alpha: 0.2,
        }
    }
}

/// A scored split plan: the chosen segments plus the statistics the
/// objective is computed from.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitPlan {
    /// Chosen segment ids, ascending.
    pub csl: Vec<u8>,
    /// Series count per sid over the full fanout, empty children included.
    pub child_sizes: Vec<u32>,
    pub variance_sum: f64,
    pub overflow_ratio: f64,
    pub fillfactor_stddev: f64,
    pub score: f64,
}

impl SplitPlan {
    pub fn fanout(&self) -> usize {
        self.child_sizes.len()
    }
}

/// Segments of `node` that still have unused symbol bits.
pub fn splittable_segments(node: &IsaxWord) -> Vec<u8> {
    (0..node.segment_count())
        .filter(|&s| node.symbol(s).depth < node.bits())
        .map(|s| s as u8)
        .collect()
}

#[inline]
fn refinement_bit(sym: u8, depth: u8, bits: u8) -> u32 {
    ((sym >> (bits - depth - 1)) & 1) as u32
}

/// Per-segment variance of the node's rows, each row projected to the
/// midpoint of its depth+1 interval on that segment. Segments already at
/// full depth report zero (they cannot be chosen).
///
/// The variance of the projected data of any plan is the sum of its chosen
/// segments' variances, so one pass here prices every candidate plan.
pub fn segment_variances(
    rows: &SaxRows,
    members: &[u32],
    node: &IsaxWord,
    breakpoints: &Breakpoints,
) -> Result<Vec<f64>, CoreError> {
    if members.is_empty() {
        return Err(CoreError::InvalidArgument("node has no rows"));
    }
    let bits = node.bits();
    let splittable = splittable_segments(node);
    if splittable.is_empty() {
        return Err(CoreError::CannotSplit);
    }
    let w = node.segment_count();
    let mut upper_counts = vec![0u64; w];
    for &m in members {
        let row = rows.row(m);
        for &seg in &splittable {
            let s = node.symbol(seg as usize);
            upper_counts[seg as usize] += refinement_bit(row[seg as usize], s.depth, bits) as u64;
        }
    }
    let total = members.len() as f64;
    let mut variances = vec![0.0; w];
    for &seg in &splittable {
        let s = node.symbol(seg as usize);
        let m0 = breakpoints.midpoint(s.code << 1, s.depth + 1);
        let m1 = breakpoints.midpoint((s.code << 1) | 1, s.depth + 1);
        let p = upper_counts[seg as usize] as f64 / total;
        variances[seg as usize] = p * (1.0 - p) * (m1 - m0) * (m1 - m0);
    }
    Ok(variances)
}

fn pow2(k: i64) -> f64 {
    math::exp2(k as f64)
}

fn ceil_log2(t: f64) -> i64 {
    let mut k = math::ceil(math::log2(t)) as i64;
    while pow2(k - 1) >= t {
        k -= 1;
    }
    while pow2(k) < t {
        k += 1;
    }
    k
}

fn floor_log2(t: f64) -> i64 {
    let mut k = math::floor(math::log2(t)) as i64;
    while pow2(k) > t {
        k -= 1;
    }
    while pow2(k + 1) <= t {
        k += 1;
    }
    k
}

/// Admissible range for the number of chosen segments so that the average
/// child fill factor stays within `[f_l, f_r]`.
///
/// The lower bound ceils and the upper bound floors; the upper bound is then
/// clamped up to the lower so at least one fanout stays admissible.
pub fn lambda_range(c_n: usize, th: usize, f_l: f64, f_r: f64, w: usize) -> (usize, usize) {
    debug_assert!(c_n > th);
    let lambda_min = (ceil_log2(c_n as f64 / (f_r * th as f64)).max(1) as usize).min(w);
    let lambda_max = floor_log2(c_n as f64 / (f_l * th as f64))
        .min(w as i64)
        .max(1) as usize;
    (lambda_min, lambda_max.max(lambda_min))
}

/// Histogram of the node's rows over the full-fanout sid space of
/// `segments` (ascending; `segments[0]` is the most significant sid bit).
pub fn base_distribution(
    rows: &SaxRows,
    members: &[u32],
    node: &IsaxWord,
    segments: &[u8],
) -> Vec<u32> {
    let bits = node.bits();
    let mut dist = vec![0u32; 1usize << segments.len()];
    for &m in members {
        let row = rows.row(m);
        let mut sid: Sid = 0;
        for &seg in segments {
            let s = node.symbol(seg as usize);
            sid = (sid << 1) | refinement_bit(row[seg as usize], s.depth, bits);
        }
        dist[sid as usize] += 1;
    }
    dist
}

/// Sum out one bit of a sid histogram. `pos_from_msb` counts from the most
/// significant bit of the `total_bits`-wide index.
pub fn marginalize_bit(dist: &[u32], total_bits: usize, pos_from_msb: usize) -> Vec<u32> {
    debug_assert_eq!(dist.len(), 1usize << total_bits);
    debug_assert!(pos_from_msb < total_bits);
    let lsb_pos = total_bits - 1 - pos_from_msb;
    let low_mask = (1usize << lsb_pos) - 1;
    let mut out = vec![0u32; dist.len() >> 1];
    for (idx, &count) in dist.iter().enumerate() {
        let folded = ((idx >> (lsb_pos + 1)) << lsb_pos) | (idx & low_mask);
        out[folded] += count;
    }
    out
}

/// Child sizes of `plan` derived from the base histogram over
/// `all_segments`, used by tests as the recount reference.
pub fn plan_child_sizes(base: &[u32], all_segments: &[u8], plan: &[u8]) -> Vec<u32> {
    let mut dist = base.to_vec();
    let mut current: Vec<u8> = all_segments.to_vec();
    let mut i = 0;
    while i < current.len() {
        if plan.contains(&current[i]) {
            i += 1;
        } else {
            dist = marginalize_bit(&dist, current.len(), i);
            current.remove(i);
        }
    }
    debug_assert_eq!(current, plan);
    dist
}

fn score_components(
    variance_sum: f64,
    lambda: usize,
    child_sizes: &[u32],
    th: usize,
    alpha: f64,
) -> (f64, f64, f64) {
    let fanout = child_sizes.len() as f64;
    let overflow = child_sizes.iter().filter(|&&s| s as usize > th).count() as f64 / fanout;
    let th_f = th as f64;
    let mean_fill = child_sizes.iter().map(|&s| s as f64 / th_f).sum::<f64>() / fanout;
    let var_fill = child_sizes
        .iter()
        .map(|&s| {
            let d = s as f64 / th_f - mean_fill;
            d * d
        })
        .sum::<f64>()
        / fanout;
    let sigma_f = math::sqrt(var_fill);
    let score = math::exp(math::sqrt(variance_sum / lambda as f64))
        + alpha * math::exp(-(1.0 + overflow) * sigma_f);
    (score, overflow, sigma_f)
}

/// Objective value of a plan: `exp(sqrt(Var/lambda)) + alpha*exp(-(1+o)*sigma_F)`
/// with `o` the overflowed-children ratio and `sigma_F` the population
/// standard deviation of child fill factors (empty children included).
pub fn score_plan(plan: &SplitPlan, th: usize, alpha: f64) -> f64 {
    score_components(
        plan.variance_sum,
        plan.csl.len(),
        &plan.child_sizes,
        th,
        alpha,
    )
    .0
}

fn better_than(candidate: &SplitPlan, best: &SplitPlan) -> bool {
    if candidate.score != best.score {
        return candidate.score > best.score;
    }
    // deterministic tie-break: smaller fanout, then lexicographically
    // smallest chosen-segment list
    if candidate.csl.len() != best.csl.len() {
        return candidate.csl.len() < best.csl.len();
    }
    candidate.csl < best.csl
}

struct PlanSearch<'a> {
    splittable: &'a [u8],
    variances: &'a [f64],
    lambda_min: usize,
    lambda_max: usize,
    th: usize,
    alpha: f64,
    best: Option<SplitPlan>,
}

impl PlanSearch<'_> {
    /// Depth-first enumeration over keep/drop decisions per segment. The
    /// running histogram covers `kept + splittable[i..]`; dropping a segment
    /// marginalizes its bit out, so every candidate's child sizes are reused
    /// from the larger-fanout plan above it.
    fn dfs(&mut self, i: usize, kept: &mut Vec<u8>, variance_sum: f64, dist: &[u32]) {
        if kept.len() > self.lambda_max {
            return;
        }
        let remaining = self.splittable.len() - i;
        if kept.len() + remaining < self.lambda_min {
            return;
        }
        if i == self.splittable.len() {
            if kept.len() >= self.lambda_min {
                self.evaluate(kept, variance_sum, dist);
            }
            return;
        }
        let seg = self.splittable[i];
        // keep: largest fanouts are explored first
        kept.push(seg);
        self.dfs(
            i + 1,
            kept,
            variance_sum + self.variances[seg as usize],
            dist,
        );
        kept.pop();
        // drop: fold the segment's bit out of the histogram
        let total_bits = kept.len() + remaining;
        let folded = marginalize_bit(dist, total_bits, kept.len());
        self.dfs(i + 1, kept, variance_sum, &folded);
    }

    fn evaluate(&mut self, kept: &[u8], variance_sum: f64, child_sizes: &[u32]) {
        let (score, overflow, sigma_f) =
            score_components(variance_sum, kept.len(), child_sizes, self.th, self.alpha);
        let candidate = SplitPlan {
            csl: kept.to_vec(),
            child_sizes: child_sizes.to_vec(),
            variance_sum,
            overflow_ratio: overflow,
            fillfactor_stddev: sigma_f,
            score,
        };
        match &self.best {
            Some(best) if !better_than(&candidate, best) => {}
            _ => self.best = Some(candidate),
        }
    }
}

/// Pick the argmax-score plan among all segment subsets whose size lies in
/// the admissible fanout window and whose segments are still splittable.
pub fn choose_split_plan(
    rows: &SaxRows,
    members: &[u32],
    node: &IsaxWord,
    breakpoints: &Breakpoints,
    params: &SplitParams,
) -> Result<SplitPlan, CoreError> {
    let variances = segment_variances(rows, members, node, breakpoints)?;
    let splittable = splittable_segments(node);
    let (mut lambda_min, mut lambda_max) = lambda_range(
        members.len(),
        params.th,
        params.f_l,
        params.f_r,
        node.segment_count(),
    );
    // fewer splittable segments than the window asks for: shrink the window
    lambda_min = lambda_min.min(splittable.len());
    lambda_max = lambda_max.min(splittable.len()).max(lambda_min);

    let base = base_distribution(rows, members, node, &splittable);
    let mut search = PlanSearch {
        splittable: &splittable,
        variances: &variances,
        lambda_min,
        lambda_max,
        th: params.th,
        alpha: params.alpha,
        best: None,
    };
    let mut kept = Vec::with_capacity(lambda_max);
    search.dfs(0, &mut kept, 0.0, &base);
    search.best.ok_or(CoreError::CannotSplit)
}

/// Binary-structure baseline: always split on the single splittable segment
/// with the largest variance (smallest id on ties).
pub fn choose_binary_split(
    rows: &SaxRows,
    members: &[u32],
    node: &IsaxWord,
    breakpoints: &Breakpoints,
    params: &SplitParams,
) -> Result<SplitPlan, CoreError> {
    let variances = segment_variances(rows, members, node, breakpoints)?;
    let splittable = splittable_segments(node);
    let seg = *splittable
        .iter()
        .max_by(|&&a, &&b| {
            variances[a as usize]
                .partial_cmp(&variances[b as usize])
                .expect("variances are finite")
                .then(b.cmp(&a))
        })
        .expect("segment_variances guarantees a splittable segment");
    let csl = vec![seg];
    let child_sizes = base_distribution(rows, members, node, &csl);
    let (score, overflow, sigma_f) = score_components(
        variances[seg as usize],
        1,
        &child_sizes,
        params.th,
        params.alpha,
    );
    Ok(SplitPlan {
        csl,
        child_sizes,
        variance_sum: variances[seg as usize],
        overflow_ratio: overflow,
        fillfactor_stddev: sigma_f,
        score,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::series::Breakpoints;

    fn toy_rows(data: &[u8], w: usize) -> SaxRows<'_> {
        SaxRows::new(data, w)
    }

    #[test]
    fn identical_rows_have_zero_variance() {
        let bp = Breakpoints::new(8).unwrap();
        let data = [0b100u8, 0b011, 0b010].repeat(5);
        let rows = toy_rows(&data, 3);
        let node = IsaxWord::root(3, 3);
        let members: Vec<u32> = (0..5).collect();
        let vars = segment_variances(&rows, &members, &node, &bp).unwrap();
        assert_eq!(vars, alloc::vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn two_point_variance_is_half_gap_squared() {
        let bp = Breakpoints::new(8).unwrap();
        // two rows splitting segment 0 at the root: refined midpoints are
        // the midpoints of the two value halves
        let data = [0b000u8, 0b111];
        let rows = toy_rows(&data, 1);
        let node = IsaxWord::root(1, 3);
        let vars = segment_variances(&rows, &[0, 1], &node, &bp).unwrap();
        let m0 = bp.midpoint(0, 1);
        let m1 = bp.midpoint(1, 1);
        let expected = ((m1 - m0) / 2.0) * ((m1 - m0) / 2.0);
        assert!((vars[0] - expected).abs() < 1e-12);
    }

    #[test]
    fn lambda_range_reference_case() {
        assert_eq!(lambda_range(100_000, 10_000, 0.5, 3.0, 16), (2, 4));
    }

    #[test]
    fn lambda_range_barely_overfull() {
        let (lo, _) = lambda_range(10_001, 10_000, 0.5, 3.0, 16);
        assert_eq!(lo, 1);
    }

    #[test]
    fn lambda_range_huge_node_clamps_to_w() {
        let (_, hi) = lambda_range(40_000_000, 10, 0.5, 3.0, 8);
        assert_eq!(hi, 8);
    }

    #[test]
    fn lambda_range_exact_powers() {
        // c_n / (f_r * th) = 8 exactly: the smallest admissible fanout is 8
        assert_eq!(lambda_range(8_000, 1_000, 0.5, 1.0, 16).0, 3);
        // c_n / (f_l * th) = 16 exactly: fanout 16 still admissible
        assert_eq!(lambda_range(8_000, 1_000, 0.5, 3.0, 16).1, 4);
    }

    #[test]
    fn base_distribution_counts_every_row_once() {
        let bp = Breakpoints::new(4).unwrap();
        let _ = &bp;
        let data = [0b10u8, 0b01, 0b11, 0b00, 0b10, 0b11].repeat(2);
        let rows = toy_rows(&data, 3);
        let node = IsaxWord::root(3, 2);
        let members: Vec<u32> = (0..4).collect();
        let dist = base_distribution(&rows, &members, &node, &[0, 1, 2]);
        assert_eq!(dist.iter().sum::<u32>(), 4);
    }

    #[test]
    fn single_segment_plan_counts_next_bits() {
        let data = [0b10u8, 0b01, 0b11, 0b00, 0b01, 0b01, 0b11, 0b11];
        let rows = toy_rows(&data, 2);
        let node = IsaxWord::root(2, 2);
        let members: Vec<u32> = (0..4).collect();
        let base = base_distribution(&rows, &members, &node, &[0, 1]);
        let sizes = plan_child_sizes(&base, &[0, 1], &[0]);
        // top bits of segment 0: 1,1,0,1
        assert_eq!(sizes, alloc::vec![1, 3]);
        let sizes1 = plan_child_sizes(&base, &[0, 1], &[1]);
        // top bits of segment 1: 0,0,0,1
        assert_eq!(sizes1, alloc::vec![3, 1]);
    }

    #[test]
    fn full_plan_equals_base() {
        let data: Vec<u8> = (0..60u8).map(|i| i % 4).collect();
        let rows = toy_rows(&data, 3);
        let node = IsaxWord::root(3, 2);
        let members: Vec<u32> = (0..20).collect();
        let base = base_distribution(&rows, &members, &node, &[0, 1, 2]);
        assert_eq!(plan_child_sizes(&base, &[0, 1, 2], &[0, 1, 2]), base);
    }

    #[test]
    fn score_even_split_second_term_is_alpha() {
        let (score, o, sf) = score_components(0.0, 2, &[5, 5, 5, 5], 10, 0.25);
        assert_eq!(o, 0.0);
        assert_eq!(sf, 0.0);
        // exp(0) + alpha*exp(0)
        assert!((score - 1.25).abs() < 1e-12);
    }

    #[test]
    fn score_one_sided_split_matches_formula() {
        let c_n = 30u32;
        let th = 10usize;
        let (score, o, sf) = score_components(0.0, 1, &[c_n, 0], th, 0.5);
        assert_eq!(o, 0.5);
        let expected_sf = c_n as f64 / (2.0 * th as f64);
        assert!((sf - expected_sf).abs() < 1e-12);
        let expected = 1.0 + 0.5 * math::exp(-1.5 * expected_sf);
        assert!((score - expected).abs() < 1e-12);
    }

    #[test]
    fn doubling_variance_increases_score() {
        let sizes = [3u32, 4, 2, 3];
        let (s1, _, _) = score_components(0.5, 2, &sizes, 10, 0.2);
        let (s2, _, _) = score_components(1.0, 2, &sizes, 10, 0.2);
        assert!(s2 > s1);
    }

    #[test]
    fn chosen_plan_lies_in_lambda_window() {
        let bp = Breakpoints::new(4).unwrap();
        let mut data = Vec::new();
        let mut seed = 11u32;
        for _ in 0..200 {
            for _ in 0..4 {
                seed = seed.wrapping_mul(1664525).wrapping_add(1013904223);
                data.push((seed >> 29) as u8 & 0b11);
            }
        }
        let rows = toy_rows(&data, 4);
        let node = IsaxWord::root(4, 2);
        let members: Vec<u32> = (0..200).collect();
        let params = SplitParams {
            th: 40,
            f_l: 0.5,
            f_r: 3.0,
            alpha: 0.2,
        };
        let plan = choose_split_plan(&rows, &members, &node, &bp, &params).unwrap();
        let (lo, hi) = lambda_range(200, 40, 0.5, 3.0, 4);
        assert!(plan.csl.len() >= lo && plan.csl.len() <= hi);
        assert_eq!(plan.child_sizes.iter().sum::<u32>(), 200);
    }

    #[test]
    fn binary_split_picks_max_variance_segment() {
        let bp = Breakpoints::new(4).unwrap();
        // segment 0 constant, segment 1 split evenly: variance lives on 1
        let mut data = Vec::new();
        for i in 0..100u8 {
            data.push(0b00);
            data.push(if i % 2 == 0 { 0b00 } else { 0b11 });
        }
        let rows = toy_rows(&data, 2);
        let node = IsaxWord::root(2, 2);
        let members: Vec<u32> = (0..100).collect();
        let params = SplitParams {
            th: 10,
            ..Default::default()
        };
        let plan = choose_binary_split(&rows, &members, &node, &bp, &params).unwrap();
        assert_eq!(plan.csl, alloc::vec![1]);
        assert_eq!(plan.child_sizes, alloc::vec![50, 50]);
    }

    #[test]
    fn cannot_split_when_all_segments_full_depth() {
        let bp = Breakpoints::new(2).unwrap();
        let node = IsaxWord::from_symbols(
            alloc::vec![crate::series::IsaxSymbol { code: 1, depth: 1 }; 2],
            1,
        );
        let data = [1u8, 1, 1, 1];
        let rows = toy_rows(&data, 2);
        let err = segment_variances(&rows, &[0, 1], &node, &bp).unwrap_err();
        assert_eq!(err, CoreError::CannotSplit);
    }
}

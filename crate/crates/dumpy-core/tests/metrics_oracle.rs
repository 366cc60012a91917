//! Distance oracles: naive summation for ED, exhaustive warping-path
//! enumeration and a textbook quadratic DP for DTW, and brute-force
//! soundness sweeps for the iSAX lower bounds.

mod common;

use common::{random_node_with_rows, random_walk, rng};
use dumpy_core::metrics::{
    band_radius, dtw_squared_banded, ed_squared_with_cutoff, lb_isax_dtw, lb_isax_ed,
    lb_keogh_squared_with_cutoff,
};
use dumpy_core::series::Breakpoints;
use dumpy_core::{dtw, ed, paa, Envelope};
use proptest::prelude::*;
use rand::Rng;

/// Naive double-loop ED oracle.
fn ed_oracle(a: &[f64], b: &[f64]) -> f64 {
    let mut sum = 0.0;
    for i in 0..a.len() {
        sum += (a[i] - b[i]).powi(2);
    }
    sum.sqrt()
}

/// Exponential enumeration of every banded warping path; the expected value
/// for small DTW instances.
fn dtw_path_enumeration(a: &[f64], b: &[f64], radius: usize) -> f64 {
    fn walk(a: &[f64], b: &[f64], i: usize, j: usize, cost: f64, radius: usize, best: &mut f64) {
        let d = a[i] - b[j];
        let cost = cost + d * d;
        if cost >= *best {
            return;
        }
        if i == a.len() - 1 && j == b.len() - 1 {
            *best = cost;
            return;
        }
        let moves = [(i + 1, j + 1), (i + 1, j), (i, j + 1)];
        for (ni, nj) in moves {
            if ni < a.len() && nj < b.len() && ni.abs_diff(nj) <= radius {
                walk(a, b, ni, nj, cost, radius, best);
            }
        }
    }
    let mut best = f64::INFINITY;
    walk(a, b, 0, 0, 0.0, radius, &mut best);
    best.sqrt()
}

/// Textbook full-matrix DP, no band.
fn dtw_dp_oracle(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len();
    let m = b.len();
    let mut dp = vec![vec![f64::INFINITY; m + 1]; n + 1];
    dp[0][0] = 0.0;
    for i in 1..=n {
        for j in 1..=m {
            let d = (a[i - 1] - b[j - 1]).powi(2);
            dp[i][j] = d + dp[i - 1][j - 1].min(dp[i - 1][j]).min(dp[i][j - 1]);
        }
    }
    dp[n][m].sqrt()
}

#[test]
fn ed_matches_naive_oracle() {
    let mut r = rng(10);
    for _ in 0..100 {
        let a = random_walk(&mut r, 128);
        let b = random_walk(&mut r, 128);
        let got = ed(&a, &b).unwrap();
        let want = ed_oracle(&a, &b);
        assert!((got - want).abs() <= 1e-9 * want.max(1.0));
    }
}

#[test]
fn dtw_matches_path_enumeration_on_small_series() {
    let mut r = rng(11);
    // the shifted-ramp reference case, full window
    let a = [1.0, 2.0, 2.0];
    let b = [0.0, 1.0, 2.0];
    let expect = dtw_path_enumeration(&a, &b, 8);
    assert!((dtw(&a, &b, 1.0).unwrap() - expect).abs() < 1e-12);

    for _ in 0..200 {
        let n = r.gen_range(2..=8usize);
        let a: Vec<f64> = (0..n).map(|_| r.gen_range(-2.0..2.0)).collect();
        let b: Vec<f64> = (0..n).map(|_| r.gen_range(-2.0..2.0)).collect();
        for radius in [1usize, 2, n] {
            let want = dtw_path_enumeration(&a, &b, radius);
            let got = dtw_squared_banded(&a, &b, radius, f64::INFINITY)
                .unwrap()
                .sqrt();
            assert!((got - want).abs() < 1e-9, "n={n} r={radius}");
        }
    }
}

#[test]
fn full_window_dtw_matches_quadratic_dp() {
    let mut r = rng(12);
    for _ in 0..50 {
        let a = random_walk(&mut r, 64);
        let b = random_walk(&mut r, 64);
        let got = dtw(&a, &b, 1.0).unwrap();
        let want = dtw_dp_oracle(&a, &b);
        assert!((got - want).abs() <= 1e-9 * want.max(1.0));
    }
}

#[test]
fn lb_keogh_is_sound_against_banded_dtw() {
    let mut r = rng(13);
    for _ in 0..500 {
        let q = random_walk(&mut r, 64);
        let s = random_walk(&mut r, 64);
        let radius = band_radius(64, 0.1);
        let env = Envelope::new(&q, radius);
        let lb = lb_keogh_squared_with_cutoff(&env, &s, f64::INFINITY).unwrap();
        let d = dtw_squared_banded(&q, &s, radius, f64::INFINITY).unwrap();
        assert!(lb <= d, "lb {lb} > dtw {d}");
    }
}

#[test]
fn isax_lower_bounds_are_sound_on_random_nodes() {
    // lower-bound soundness sweep: for a node word that is a prefix of the
    // stored series' SAX word, lb <= true distance must hold for both
    // measures, with zero violations
    let mut r = rng(14);
    let w = 8;
    let n = 64;
    let bits = 8u8;
    let bp = Breakpoints::new(256).unwrap();
    for round in 0..2_000 {
        let s = random_walk(&mut r, n);
        let s_paa = paa(&s, w).unwrap();
        let s_sax: Vec<u8> = s_paa.iter().map(|&v| bp.symbol_for(v)).collect();
        // random node covering the series: random per-segment prefix depth
        let mut node = dumpy_core::series::IsaxWord::root(w, bits);
        for seg in 0..w {
            let depth = r.gen_range(0..=bits);
            for d in 0..depth {
                node.refine(seg, (s_sax[seg] >> (bits - d - 1)) & 1);
            }
        }
        assert!(node.is_prefix_of(&s_sax));

        let q = random_walk(&mut r, n);
        let q_paa = paa(&q, w).unwrap();
        let lb = lb_isax_ed(&q_paa, &node, &bp, n);
        let d = ed(&q, &s).unwrap();
        assert!(lb <= d, "round {round}: ED lb {lb} > {d}");

        let radius = band_radius(n, 0.1);
        let env = Envelope::new(&q, radius);
        let (u, l) = env.paa_means(w).unwrap();
        let lb_dtw = lb_isax_dtw(&u, &l, &node, &bp, n);
        let d_dtw = dtw(&q, &s, 0.1).unwrap();
        assert!(lb_dtw <= d_dtw, "round {round}: DTW lb {lb_dtw} > {d_dtw}");
    }
}

#[test]
fn lb_is_zero_for_node_containing_query() {
    let mut r = rng(15);
    let bp = Breakpoints::new(256).unwrap();
    for _ in 0..200 {
        let q = random_walk(&mut r, 64);
        let q_paa = paa(&q, 8).unwrap();
        let q_sax: Vec<u8> = q_paa.iter().map(|&v| bp.symbol_for(v)).collect();
        let (node, _) = {
            let mut node = dumpy_core::series::IsaxWord::root(8, 8);
            for seg in 0..8 {
                let depth = r.gen_range(0..=8u8);
                for d in 0..depth {
                    node.refine(seg, (q_sax[seg] >> (8 - d - 1)) & 1);
                }
            }
            (node, ())
        };
        assert_eq!(lb_isax_ed(&q_paa, &node, &bp, 64), 0.0);
        let env = Envelope::new(&q, band_radius(64, 0.1));
        let (u, l) = env.paa_means(8).unwrap();
        assert_eq!(lb_isax_dtw(&u, &l, &node, &bp, 64), 0.0);
    }
}

#[test]
fn cutoff_kernels_agree_with_plain_kernels() {
    let mut r = rng(16);
    for _ in 0..200 {
        let a = random_walk(&mut r, 32);
        let b = random_walk(&mut r, 32);
        let full = ed(&a, &b).unwrap();
        let sq = ed_squared_with_cutoff(&a, &b, f64::INFINITY).unwrap();
        assert_eq!(sq.sqrt(), full);
        let radius = band_radius(32, 0.2);
        let d = dtw_squared_banded(&a, &b, radius, f64::INFINITY).unwrap();
        // a cutoff at or above the true value must not abandon (every DP row
        // holds a cell at most the final cost)
        assert_eq!(dtw_squared_banded(&a, &b, radius, d), Some(d));
        // abandoning is conservative: None is only allowed when the true
        // value exceeds the cutoff
        if dtw_squared_banded(&a, &b, radius, d * 0.5).is_none() {
            assert!(d > d * 0.5);
        }
        // an impossible cutoff always abandons on the first row
        assert_eq!(dtw_squared_banded(&a, &b, radius, -1.0), None);
    }
}

#[test]
fn node_rows_generator_produces_covered_rows() {
    let mut r = rng(17);
    let (node, rows) = random_node_with_rows(&mut r, 6, 8, 40, 5);
    for row in rows.chunks_exact(6) {
        assert!(node.is_prefix_of(row));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn distances_are_symmetric_and_identity_holds(seed in 0u64..10_000) {
        let mut r = rng(seed);
        let a = random_walk(&mut r, 32);
        let b = random_walk(&mut r, 32);
        prop_assert_eq!(ed(&a, &b).unwrap(), ed(&b, &a).unwrap());
        prop_assert_eq!(ed(&a, &a).unwrap(), 0.0);
        let da = dtw(&a, &b, 0.1).unwrap();
        let db = dtw(&b, &a, 0.1).unwrap();
        prop_assert!((da - db).abs() < 1e-12);
        prop_assert_eq!(dtw(&a, &a, 0.1).unwrap(), 0.0);
    }

    #[test]
    fn dtw_never_exceeds_ed(seed in 0u64..10_000, ratio in 0.01f64..1.0) {
        let mut r = rng(seed);
        let a = random_walk(&mut r, 40);
        let b = random_walk(&mut r, 40);
        prop_assert!(dtw(&a, &b, ratio).unwrap() <= ed(&a, &b).unwrap() + 1e-12);
    }

    #[test]
    fn envelope_always_brackets_query(seed in 0u64..10_000, radius in 0usize..20) {
        let mut r = rng(seed);
        let q = random_walk(&mut r, 48);
        let env = Envelope::new(&q, radius);
        for i in 0..q.len() {
            prop_assert!(env.lower[i] <= q[i] && q[i] <= env.upper[i]);
        }
    }
}

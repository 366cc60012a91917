//! Shared generators for the oracle tests.
#![allow(dead_code)] // each test binary uses a different subset

use dumpy_core::series::{Breakpoints, IsaxSymbol, IsaxWord};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Z-normalized random walk of length `n`.
pub fn random_walk(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let mut acc = 0.0;
    let steps: Vec<f64> = (0..n)
        .map(|_| {
            // Box-Muller keeps the dev-dependency surface small
            let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
            let u2: f64 = rng.gen_range(0.0..1.0);
            acc += (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
            acc
        })
        .collect();
    dumpy_core::znormalize(&steps).unwrap()
}

/// A random iSAX node word together with SAX rows it covers.
pub fn random_node_with_rows(
    rng: &mut ChaCha8Rng,
    w: usize,
    bits: u8,
    row_count: usize,
    max_depth: u8,
) -> (IsaxWord, Vec<u8>) {
    let symbols = (0..w)
        .map(|_| {
            let depth = rng.gen_range(0..=max_depth.min(bits));
            let code = if depth == 0 {
                0
            } else {
                rng.gen_range(0..(1u16 << depth)) as u8
            };
            IsaxSymbol { code, depth }
        })
        .collect();
    let node = IsaxWord::from_symbols(symbols, bits);
    let mut rows = Vec::with_capacity(row_count * w);
    for _ in 0..row_count {
        for seg in 0..w {
            let s = node.symbol(seg);
            let free_bits = bits - s.depth;
            let low = if free_bits == 0 {
                0
            } else {
                rng.gen_range(0..(1u16 << free_bits)) as u8
            };
            rows.push((((s.code as u16) << free_bits) & 0xff) as u8 | low);
        }
    }
    (node, rows)
}

/// Per-segment SAX word of a series under the given table.
pub fn sax_of(series: &[f64], w: usize, bp: &Breakpoints) -> Vec<u8> {
    dumpy_core::sax_from_paa(&dumpy_core::paa(series, w).unwrap(), bp)
}

//! Data-series representation: z-normalization, PAA, SAX/iSAX words,
//! breakpoint tables and routing bit-codes.

use alloc::vec::Vec;

use crate::error::CoreError;
use crate::math;

/// Routing bit-code produced by splitting a node on its chosen segments.
///
/// One bit per chosen segment, concatenated in ascending segment-id order
/// with the first chosen segment in the most significant position.
pub type Sid = u32;

/// Finite clamp applied to the two unbounded outermost symbol regions when a
/// midpoint or a width is needed. Well outside every breakpoint this crate
/// can produce (|Phi^-1(255/256)| < 2.7).
pub const VALUE_BOUND: f64 = 4.0;

/// Z-normalize to zero mean and unit population standard deviation.
///
/// A constant series (zero variance) maps to all zeros so the pipeline stays
/// total on degenerate inputs.
pub fn znormalize(raw: &[f64]) -> Result<Vec<f64>, CoreError> {
    if raw.is_empty() {
        return Err(CoreError::InvalidArgument(
            "cannot z-normalize an empty series",
        ));
    }
    let n = raw.len() as f64;
    let mean = raw.iter().sum::<f64>() / n;
    let var = raw.iter().map(|&x| (x - mean) * (x - mean)).sum::<f64>() / n;
    let std = math::sqrt(var);
    if std == 0.0 {
        return Ok(alloc::vec![0.0; raw.len()]);
    }
    Ok(raw.iter().map(|&x| (x - mean) / std).collect())
}

/// Piecewise aggregate approximation: mean of each of `w` equal-length segments.
pub fn paa(series: &[f64], w: usize) -> Result<Vec<f64>, CoreError> {
    let n = series.len();
    if w == 0 || w > n {
        return Err(CoreError::InvalidArgument(
            "segment count must be in [1, series length]",
        ));
    }
    if n % w != 0 {
        return Err(CoreError::InvalidArgument(
            "segment count must divide the series length",
        ));
    }
    let seg_len = n / w;
    Ok(series
        .chunks_exact(seg_len)
        .map(|seg| seg.iter().sum::<f64>() / seg_len as f64)
        .collect())
}

/// Standard-normal breakpoint table for one power-of-two cardinality.
///
/// `thresholds[i] = Phi^-1((i+1)/c)`; region `k` of the value axis is
/// `[thresholds[k-1], thresholds[k])` with the outermost regions unbounded.
/// A value exactly equal to a breakpoint belongs to the upper region.
#[derive(Debug, Clone, PartialEq)]
pub struct Breakpoints {
    bits: u8,
    thresholds: Vec<f64>,
}

/// Build the breakpoint table for cardinality `c` (power of two, 2..=256).
pub fn gaussian_breakpoints(c: u32) -> Result<Breakpoints, CoreError> {
    Breakpoints::new(c)
}

impl Breakpoints {
    pub fn new(cardinality: u32) -> Result<Self, CoreError> {
        if cardinality < 2 || !cardinality.is_power_of_two() || cardinality > 256 {
            return Err(CoreError::InvalidArgument(
                "cardinality must be a power of two in [2, 256]",
            ));
        }
        let bits = cardinality.trailing_zeros() as u8;
        let thresholds = (1..cardinality)
            .map(|i| math::normal_quantile(i as f64 / cardinality as f64))
            .collect();
        Ok(Self { bits, thresholds })
    }

    pub fn cardinality(&self) -> u32 {
        1u32 << self.bits
    }

    pub fn bits(&self) -> u8 {
        self.bits
    }

    pub fn thresholds(&self) -> &[f64] {
        &self.thresholds
    }

    /// SAX symbol for one PAA coefficient: the number of breakpoints at or
    /// below the value, so a boundary value is binned upward.
    pub fn symbol_for(&self, value: f64) -> u8 {
        self.thresholds.partition_point(|&t| t <= value) as u8
    }

    /// Value interval covered by iSAX code `code` at `depth` bits.
    /// Unbounded edges are `f64::NEG_INFINITY` / `f64::INFINITY`.
    pub fn interval(&self, code: u8, depth: u8) -> (f64, f64) {
        debug_assert!(depth <= self.bits);
        let shift = self.bits - depth;
        let first = (code as usize) << shift;
        let last_excl = (code as usize + 1) << shift;
        let lo = if first == 0 {
            f64::NEG_INFINITY
        } else {
            self.thresholds[first - 1]
        };
        let hi = if last_excl == self.cardinality() as usize {
            f64::INFINITY
        } else {
            self.thresholds[last_excl - 1]
        };
        (lo, hi)
    }

    /// Interval midpoint with the unbounded edges clamped to `VALUE_BOUND`.
    pub fn midpoint(&self, code: u8, depth: u8) -> f64 {
        let (lo, hi) = self.interval(code, depth);
        0.5 * (lo.max(-VALUE_BOUND) + hi.min(VALUE_BOUND))
    }

    /// Interval width with the unbounded edges clamped to `VALUE_BOUND`.
    pub fn width(&self, code: u8, depth: u8) -> f64 {
        let (lo, hi) = self.interval(code, depth);
        hi.min(VALUE_BOUND) - lo.max(-VALUE_BOUND)
    }

    /// The breakpoint separating the two depth+1 children of region
    /// `(code, depth)`; always finite.
    pub fn split_threshold(&self, code: u8, depth: u8) -> f64 {
        debug_assert!(depth < self.bits);
        let mid = (((code as usize) << 1) | 1) << (self.bits - depth - 1);
        self.thresholds[mid - 1]
    }
}

/// SAX word: one symbol per segment at the full bit depth.
pub type SaxWord = Vec<u8>;

/// Convert a PAA vector into SAX symbols under the given breakpoint table.
pub fn sax_from_paa(paa: &[f64], breakpoints: &Breakpoints) -> SaxWord {
    paa.iter().map(|&v| breakpoints.symbol_for(v)).collect()
}

/// One iSAX segment: the top `depth` bits of the SAX symbol.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct IsaxSymbol {
    pub code: u8,
    pub depth: u8,
}

/// iSAX word: a per-segment bit-prefix of a SAX word. Depth 0 is the
/// wildcard symbol covering the whole value range.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IsaxWord {
    bits: u8,
    symbols: Vec<IsaxSymbol>,
}

impl IsaxWord {
    /// All-wildcard word (every segment at depth 0).
    pub fn root(w: usize, bits: u8) -> Self {
        Self {
            bits,
            symbols: alloc::vec![IsaxSymbol::default(); w],
        }
    }

    pub fn from_symbols(symbols: Vec<IsaxSymbol>, bits: u8) -> Self {
        debug_assert!(symbols.iter().all(|s| s.depth <= bits));
        Self { bits, symbols }
    }

    pub fn bits(&self) -> u8 {
        self.bits
    }

    pub fn segment_count(&self) -> usize {
        self.symbols.len()
    }

    pub fn symbols(&self) -> &[IsaxSymbol] {
        &self.symbols
    }

    pub fn symbol(&self, segment: usize) -> IsaxSymbol {
        self.symbols[segment]
    }

    /// Refine one segment by a single bit.
    pub fn refine(&mut self, segment: usize, bit: u8) {
        let s = &mut self.symbols[segment];
        debug_assert!(s.depth < self.bits);
        s.code = (s.code << 1) | (bit & 1);
        s.depth += 1;
    }

    /// Child word obtained by appending each sid bit to its chosen segment.
    pub fn extend(&self, csl: &[u8], sid: Sid) -> Self {
        let lambda = csl.len();
        let mut child = self.clone();
        for (j, &seg) in csl.iter().enumerate() {
            let bit = ((sid >> (lambda - 1 - j)) & 1) as u8;
            child.refine(seg as usize, bit);
        }
        child
    }

    /// Whether this word is a per-segment bit-prefix of `sax`.
    pub fn is_prefix_of(&self, sax: &[u8]) -> bool {
        (0..self.symbols.len()).all(|seg| self.segment_is_prefix(seg, sax[seg]))
    }

    /// Whether the word's code at `segment` is a prefix of the SAX symbol.
    pub fn segment_is_prefix(&self, segment: usize, sym: u8) -> bool {
        let s = self.symbols[segment];
        // u16 so a depth-0 (wildcard) segment shifts by the full bit width
        s.code as u16 == (sym as u16) >> (self.bits - s.depth)
    }
}

fn next_bit(sym: u8, depth: u8, bits: u8) -> u8 {
    (sym >> (bits - depth - 1)) & 1
}

/// Routing bit-code for a query SAX word through a node split on `csl`.
///
/// For each chosen segment the sid takes the bit one past the node's current
/// depth, i.e. the bit that distinguishes the node's children.
pub fn promote_isax(node: &IsaxWord, query_sax: &[u8], csl: &[u8]) -> Result<Sid, CoreError> {
    promote(node, query_sax, csl, None)
}

/// Like [`promote_isax`] but forcing the bit of `fixed_segment` to
/// `fixed_bit` wherever that segment is chosen.
pub fn promote_isax_fixed(
    node: &IsaxWord,
    query_sax: &[u8],
    csl: &[u8],
    fixed_segment: u8,
    fixed_bit: u8,
) -> Result<Sid, CoreError> {
    promote(node, query_sax, csl, Some((fixed_segment, fixed_bit)))
}

fn promote(
    node: &IsaxWord,
    query_sax: &[u8],
    csl: &[u8],
    fixed: Option<(u8, u8)>,
) -> Result<Sid, CoreError> {
    let bits = node.bits();
    let mut sid: Sid = 0;
    for &seg in csl {
        let sym = node.symbol(seg as usize);
        if sym.depth >= bits {
            return Err(CoreError::Internal("split exceeded the symbol cardinality"));
        }
        let bit = match fixed {
            Some((fseg, fbit)) if fseg == seg => fbit & 1,
            _ => next_bit(query_sax[seg as usize], sym.depth, bits),
        };
        sid = (sid << 1) | bit as Sid;
    }
    Ok(sid)
}

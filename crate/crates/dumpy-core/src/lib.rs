//! Core algorithms for the dumpy data-series index.
//!
//! This crate is `no_std` (with `alloc`) and holds everything that is pure
//! computation: z-normalization, PAA/SAX/iSAX summarization, breakpoint
//! tables, exact distances (ED and banded DTW), iSAX lower bounds, and the
//! adaptive split-plan search. Disk layout, index structure and query
//! drivers live in the companion `dumpy` crate.

#![no_std]
#![deny(unsafe_code)]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod error;
pub mod math;
pub mod metrics;
pub mod series;
pub mod split;

pub use error::CoreError;
pub use metrics::{dtw, ed, DistanceKind, Envelope};
pub use series::{
    gaussian_breakpoints, paa, promote_isax, promote_isax_fixed, sax_from_paa, znormalize,
    Breakpoints, IsaxSymbol, IsaxWord, SaxWord, Sid,
};
pub use split::{choose_split_plan, lambda_range, score_plan, segment_variances, SplitPlan};

//! Disk-backed adaptive multi-ary iSAX index for fixed-length data series.
//!
//! The index summarizes every series as a SAX word, grows a multi-ary tree
//! whose overfull nodes split adaptively on a scored subset of segments,
//! packs small sibling leaves into shared disk extents, and answers exact
//! and approximate kNN queries under ED and constrained DTW by pruning with
//! iSAX lower bounds. Building and exact search both come in serial and
//! pipelined-parallel variants that produce identical results.

pub mod bench;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod error;
pub mod pbuild;
pub mod query;
pub mod saxtable;
pub mod tree;

pub use config::{DistanceSetting, IndexConfig};
pub use dataset::DatasetHandle;
pub use error::{DumpyError, Result};
pub use query::{approx_search, exact_search, extended_approx_search, PreparedQuery, QueryResult};
pub use tree::build::build_index;
pub use tree::Index;

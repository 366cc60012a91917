//! Index configuration: every knob of the build and query pipeline, with
//! the defaults the index is normally run with.

use serde::{Deserialize, Serialize};

use crate::error::{DumpyError, Result};
use dumpy_core::DistanceKind;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IndexConfig {
    /// On-disk format version.
    pub version: u32,
    /// Series length.
    pub n: u32,
    /// Number of SAX segments.
    pub w: u16,
    /// Bits per SAX symbol; cardinality is `2^b`.
    pub b: u16,
    /// Leaf size threshold.
    pub th: u32,
    /// Weight of the compactness term in the split objective.
    pub alpha: f64,
    /// Average child fill-factor window bounding the fanout search.
    pub f_l: f64,
    pub f_r: f64,
    /// Demotion-bit budget factor for leaf packing: a pack may demote at
    /// most `floor(rho * lambda)` bits.
    pub rho: f64,
    /// Fuzzy boundary fraction of the region width; 0 disables duplication.
    pub fuzzy_f: f64,
    /// Maximum stored copies of one series (the primary copy included).
    pub max_replication: u32,
    /// Force single-segment max-variance splits and disable packing.
    pub binary_split: bool,
    /// Default distance for queries that do not specify one.
    pub default_distance: DistanceSetting,
    /// Repack a node's sibling packs after this many leaf extractions.
    pub repack_threshold: u32,
    /// Raw-data batch size for dataset scans, in bytes.
    pub batch_bytes: u64,
}

impl Default for IndexConfig {
    fn default() -> Self {
        Self {
            version: FORMAT_VERSION,
            n: 256,
            w: 16,
            b: 8,
            th: 10_000,
            alpha: 0.2,
            f_l: 0.5,
            f_r: 3.0,
            rho: 0.5,
            fuzzy_f: 0.0,
            max_replication: 3,
            binary_split: false,
            default_distance: DistanceSetting::default(),
            repack_threshold: 32,
            batch_bytes: 100 << 20,
        }
    }
}

/// Serializable companion of [`DistanceKind`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DistanceSetting {
    #[default]
    Ed,
    Dtw {
        window_ratio: f64,
    },
}

impl From<DistanceSetting> for DistanceKind {
    fn from(s: DistanceSetting) -> Self {
        match s {
            DistanceSetting::Ed => DistanceKind::Ed,
            DistanceSetting::Dtw { window_ratio } => DistanceKind::Dtw { window_ratio },
        }
    }
}

impl From<DistanceKind> for DistanceSetting {
    fn from(k: DistanceKind) -> Self {
        match k {
            DistanceKind::Ed => DistanceSetting::Ed,
            DistanceKind::Dtw { window_ratio } => DistanceSetting::Dtw { window_ratio },
        }
    }
}

impl IndexConfig {
    pub fn cardinality(&self) -> u32 {
        1u32 << self.b
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(DumpyError::invalid("series length must be positive"));
        }
        if self.w == 0 || self.w > 16 {
            return Err(DumpyError::invalid("segment count must be in [1, 16]"));
        }
        if self.n % self.w as u32 != 0 {
            return Err(DumpyError::invalid(format!(
                "segment count {} must divide the series length {}",
                self.w, self.n
            )));
        }
        if self.b == 0 || self.b > 8 {
            return Err(DumpyError::invalid("symbol bit depth must be in [1, 8]"));
        }
        if self.th == 0 {
            return Err(DumpyError::invalid("leaf threshold must be positive"));
        }
        if !(self.f_l > 0.0 && self.f_l <= self.f_r) {
            return Err(DumpyError::invalid(
                "fill-factor window must satisfy 0 < f_l <= f_r",
            ));
        }
        if !(0.0..=1.0).contains(&self.rho) {
            return Err(DumpyError::invalid("rho must be in [0, 1]"));
        }
        if !(0.0..1.0).contains(&self.fuzzy_f) {
            return Err(DumpyError::invalid("fuzzy fraction must be in [0, 1)"));
        }
        if self.max_replication == 0 {
            return Err(DumpyError::invalid("replication factor must be at least 1"));
        }
        if let DistanceSetting::Dtw { window_ratio } = self.default_distance {
            if !(window_ratio > 0.0 && window_ratio <= 1.0) {
                return Err(DumpyError::invalid("DTW window ratio must be in (0, 1]"));
            }
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: IndexConfig =
            toml::from_str(text).map_err(|e| DumpyError::format(format!("bad config: {e}")))?;
        if cfg.version != FORMAT_VERSION {
            return Err(DumpyError::format(format!(
                "unsupported config version {} (expected {})",
                cfg.version, FORMAT_VERSION
            )));
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

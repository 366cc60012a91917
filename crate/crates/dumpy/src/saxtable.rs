//! The SAX table: one full-depth SAX word per dataset ordinal, the only
//! input the tree-growth phase needs. Persisted as one symbol byte per
//! segment behind a small header.

use std::io::{Read, Write};
use std::path::Path;

use dumpy_core::series::Breakpoints;
use dumpy_core::split::SaxRows;

use crate::config::IndexConfig;
use crate::dataset::{canonicalize, DatasetHandle};
use crate::error::{DumpyError, Result};

const MAGIC: &[u8; 4] = b"DSAX";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SaxTable {
    w: usize,
    bits: u8,
    data: Vec<u8>,
}

impl SaxTable {
    pub fn new(w: usize, bits: u8) -> Self {
        Self {
            w,
            bits,
            data: Vec::new(),
        }
    }

    pub fn count(&self) -> u64 {
        (self.data.len() / self.w) as u64
    }

    pub fn w(&self) -> usize {
        self.w
    }

    pub fn bits(&self) -> u8 {
        self.bits
    }

    pub fn row(&self, ordinal: u64) -> &[u8] {
        let start = ordinal as usize * self.w;
        &self.data[start..start + self.w]
    }

    pub fn push_row(&mut self, row: &[u8]) {
        debug_assert_eq!(row.len(), self.w);
        self.data.extend_from_slice(row);
    }

    pub fn rows(&self) -> SaxRows<'_> {
        SaxRows::new(&self.data, self.w)
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.data
    }

    /// Raw storage for the parallel builder, which fills disjoint row
    /// ranges from worker threads.
    pub fn from_raw(w: usize, bits: u8, data: Vec<u8>) -> Self {
        debug_assert_eq!(data.len() % w, 0);
        Self { w, bits, data }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        f.write_all(MAGIC)?;
        f.write_all(&(self.w as u16).to_le_bytes())?;
        f.write_all(&(self.bits as u16).to_le_bytes())?;
        f.write_all(&self.count().to_le_bytes())?;
        f.write_all(&self.data)?;
        f.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
        let mut magic = [0u8; 4];
        f.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(DumpyError::format("not a SAX table file"));
        }
        let mut u16buf = [0u8; 2];
        f.read_exact(&mut u16buf)?;
        let w = u16::from_le_bytes(u16buf) as usize;
        f.read_exact(&mut u16buf)?;
        let bits = u16::from_le_bytes(u16buf);
        let mut u64buf = [0u8; 8];
        f.read_exact(&mut u64buf)?;
        let count = u64::from_le_bytes(u64buf);
        if w == 0 || bits == 0 || bits > 8 {
            return Err(DumpyError::format("corrupt SAX table header"));
        }
        let mut data = vec![0u8; count as usize * w];
        f.read_exact(&mut data)?;
        if data.iter().any(|&s| (s as u16) >= (1u16 << bits)) {
            return Err(DumpyError::format("SAX symbol exceeds cardinality"));
        }
        Ok(Self {
            w,
            bits: bits as u8,
            data,
        })
    }
}

/// Compute the SAX word of one canonical (already normalized) series.
pub fn sax_word_of(canonical: &[f32], w: usize, bp: &Breakpoints) -> Result<Vec<u8>> {
    let lifted = crate::dataset::lift(canonical);
    let paa = dumpy_core::paa(&lifted, w)?;
    Ok(dumpy_core::sax_from_paa(&paa, bp))
}

/// Pass 1 of the build: scan the dataset once and collect every SAX word.
/// When `keep_paa` is set the per-series PAA coefficients are retained too
/// (the fuzzy-duplication bands are defined on PAA values).
pub fn build_sax_table(
    ds: &DatasetHandle,
    cfg: &IndexConfig,
    bp: &Breakpoints,
    keep_paa: bool,
) -> Result<(SaxTable, Option<Vec<f32>>)> {
    if ds.n != cfg.n as usize {
        return Err(DumpyError::invalid(format!(
            "dataset length {} does not match configured n {}",
            ds.n, cfg.n
        )));
    }
    let w = cfg.w as usize;
    let mut table = SaxTable::new(w, cfg.b as u8);
    let mut paa_table = if keep_paa {
        Some(Vec::with_capacity(ds.count as usize * w))
    } else {
        None
    };
    ds.scan_batches(cfg.batch_bytes, |_, rows| {
        for raw in rows.chunks_exact(ds.n) {
            let canonical = canonicalize(raw)?;
            let lifted = crate::dataset::lift(&canonical);
            let paa = dumpy_core::paa(&lifted, w)?;
            let word = dumpy_core::sax_from_paa(&paa, bp);
            table.push_row(&word);
            if let Some(pt) = paa_table.as_mut() {
                pt.extend(paa.iter().map(|&v| v as f32));
            }
        }
        Ok(())
    })?;
    Ok((table, paa_table))
}

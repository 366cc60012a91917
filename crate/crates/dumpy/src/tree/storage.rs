//! Leaf record codec and file access.
//!
//! Record layout (little-endian): ordinal u64, then `n` f32 values of the
//! canonical series, then `w` SAX symbol bytes. Packs are contiguous runs
//! of such records inside per-subtree files.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::os::unix::fs::FileExt;
use std::path::Path;

use crate::config::IndexConfig;
use crate::error::Result;
use crate::tree::{Index, LeafPack};

pub fn record_size(cfg: &IndexConfig) -> usize {
    8 + cfg.n as usize * 4 + cfg.w as usize
}

pub fn encode_record(out: &mut Vec<u8>, ordinal: u64, canonical: &[f32], sax: &[u8]) {
    out.extend_from_slice(&ordinal.to_le_bytes());
    for v in canonical {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(sax);
}

/// Zero-copy view of one record inside a pack buffer.
pub struct RecordView<'a> {
    pub ordinal: u64,
    pub values: &'a [u8],
    pub sax: &'a [u8],
}

pub fn decode_record<'a>(bytes: &'a [u8], cfg: &IndexConfig) -> RecordView<'a> {
    let n = cfg.n as usize;
    let w = cfg.w as usize;
    let ordinal = u64::from_le_bytes(bytes[..8].try_into().expect("record header"));
    RecordView {
        ordinal,
        values: &bytes[8..8 + 4 * n],
        sax: &bytes[8 + 4 * n..8 + 4 * n + w],
    }
}

/// Decode a record's values into an f64 working buffer.
pub fn decode_values(values: &[u8], out: &mut [f64]) {
    for (chunk, v) in values.chunks_exact(4).zip(out.iter_mut()) {
        *v = f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]) as f64;
    }
}

/// Cache of open leaf-file handles keyed by file id.
pub struct FilePool {
    write: bool,
    handles: HashMap<u32, File>,
}

impl FilePool {
    pub fn reader() -> Self {
        Self {
            write: false,
            handles: HashMap::new(),
        }
    }

    pub fn writer() -> Self {
        Self {
            write: true,
            handles: HashMap::new(),
        }
    }

    pub fn get(&mut self, index: &Index, file: u32) -> Result<&File> {
        if !self.handles.contains_key(&file) {
            let path = index.file_path(file);
            let handle = if self.write {
                OpenOptions::new()
                    .read(true)
                    .write(true)
                    .create(true)
                    .truncate(false)
                    .open(&path)?
            } else {
                File::open(&path)?
            };
            self.handles.insert(file, handle);
        }
        Ok(&self.handles[&file])
    }
}

/// Read a whole pack extent (only the `len` slots actually written).
pub fn read_pack_bytes(index: &Index, pack: &LeafPack, pool: &mut FilePool) -> Result<Vec<u8>> {
    let rec = record_size(&index.cfg);
    let mut buf = vec![0u8; pack.len as usize * rec];
    if !buf.is_empty() {
        let f = pool.get(index, pack.extent.file)?;
        f.read_exact_at(&mut buf, pack.extent.offset)?;
    }
    Ok(buf)
}

/// Write one record at a slot of a pack extent.
pub fn write_record_at(
    index: &Index,
    pack: &LeafPack,
    slot: u32,
    record: &[u8],
    pool: &mut FilePool,
) -> Result<()> {
    let rec = record_size(&index.cfg);
    debug_assert_eq!(record.len(), rec);
    debug_assert!(slot < pack.extent.capacity);
    let f = pool.get(index, pack.extent.file)?;
    f.write_all_at(record, pack.extent.offset + slot as u64 * rec as u64)?;
    Ok(())
}

/// Append raw bytes at an absolute file offset.
pub fn write_bytes_at(path: &Path, offset: u64, bytes: &[u8]) -> Result<()> {
    let f = OpenOptions::new()
        .read(true)
        .write(true)
        .create(true)
        .truncate(false)
        .open(path)?;
    f.write_all_at(bytes, offset)?;
    Ok(())
}

/// Ensure a file exists with at least `len` bytes.
pub fn preallocate(path: &Path, len: u64) -> Result<()> {
    let f = OpenOptions::new()
        .read(true)
        .write(true)
        .create(true)
        .truncate(false)
        .open(path)?;
    if f.metadata()?.len() < len {
        f.set_len(len)?;
    }
    Ok(())
}

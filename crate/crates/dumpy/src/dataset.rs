//! Flat binary datasets: headerless little-endian f32 rows of a fixed
//! length, the interchange format shared by datasets, query files and the
//! ground-truth oracle.

use std::fs::File;
use std::io::{BufWriter, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{DumpyError, Result};

/// An opened flat-f32 dataset: `count` rows of `n` little-endian floats.
#[derive(Debug, Clone)]
pub struct DatasetHandle {
    pub path: PathBuf,
    pub n: usize,
    pub count: u64,
}

/// The only element encoding this artifact reads and writes.
pub const ELEMENT_ENCODING: &str = "f32le";

impl DatasetHandle {
    pub fn open(path: impl Into<PathBuf>, n: usize) -> Result<Self> {
        let path = path.into();
        if n == 0 {
            return Err(DumpyError::invalid("series length must be positive"));
        }
        let meta = std::fs::metadata(&path)?;
        let row = n as u64 * 4;
        if meta.len() % row != 0 {
            return Err(DumpyError::format(format!(
                "{} is not a whole number of {}-point f32 rows ({} bytes)",
                path.display(),
                n,
                meta.len()
            )));
        }
        Ok(Self {
            path,
            n,
            count: meta.len() / row,
        })
    }

    pub fn encoding(&self) -> &'static str {
        ELEMENT_ENCODING
    }

    pub fn row_bytes(&self) -> usize {
        self.n * 4
    }

    /// Scan the file in batches of at most `batch_bytes`, invoking the
    /// callback with (first ordinal, rows). Batch size is an implementation
    /// knob: any value yields the same sequence of rows.
    pub fn scan_batches<F>(&self, batch_bytes: u64, mut f: F) -> Result<()>
    where
        F: FnMut(u64, &[f32]) -> Result<()>,
    {
        let rows_per_batch = (batch_bytes / self.row_bytes() as u64).max(1);
        let mut file = File::open(&self.path)?;
        let mut buf = vec![0u8; (rows_per_batch as usize) * self.row_bytes()];
        let mut floats = vec![0f32; rows_per_batch as usize * self.n];
        let mut ordinal = 0u64;
        while ordinal < self.count {
            let rows = rows_per_batch.min(self.count - ordinal) as usize;
            let bytes = rows * self.row_bytes();
            file.read_exact(&mut buf[..bytes])?;
            decode_f32(&buf[..bytes], &mut floats[..rows * self.n]);
            f(ordinal, &floats[..rows * self.n])?;
            ordinal += rows as u64;
        }
        Ok(())
    }

    /// Read one row.
    pub fn read_row(&self, ordinal: u64) -> Result<Vec<f32>> {
        if ordinal >= self.count {
            return Err(DumpyError::invalid(format!(
                "ordinal {ordinal} out of range"
            )));
        }
        let mut file = File::open(&self.path)?;
        file.seek(SeekFrom::Start(ordinal * self.row_bytes() as u64))?;
        let mut buf = vec![0u8; self.row_bytes()];
        file.read_exact(&mut buf)?;
        let mut out = vec![0f32; self.n];
        decode_f32(&buf, &mut out);
        Ok(out)
    }

    /// All rows, for small files such as query sets.
    pub fn read_all(&self) -> Result<Vec<Vec<f32>>> {
        let mut rows = Vec::with_capacity(self.count as usize);
        self.scan_batches(64 << 20, |_, batch| {
            for row in batch.chunks_exact(self.n) {
                rows.push(row.to_vec());
            }
            Ok(())
        })?;
        Ok(rows)
    }
}

pub fn decode_f32(bytes: &[u8], out: &mut [f32]) {
    debug_assert_eq!(bytes.len(), out.len() * 4);
    for (chunk, v) in bytes.chunks_exact(4).zip(out.iter_mut()) {
        *v = f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]);
    }
}

pub fn encode_f32(values: &[f32], out: &mut Vec<u8>) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

/// The canonical indexed form of a series: z-normalize in f64, then round
/// to f32. Every consumer (SAX words, stored records, distance kernels)
/// works from this exact form so region containment is bit-exact.
pub fn canonicalize(raw: &[f32]) -> Result<Vec<f32>> {
    let as_f64: Vec<f64> = raw.iter().map(|&v| v as f64).collect();
    let z = dumpy_core::znormalize(&as_f64)?;
    Ok(z.iter().map(|&v| v as f32).collect())
}

/// Lift a canonical f32 series into the f64 working form.
pub fn lift(series: &[f32]) -> Vec<f64> {
    series.iter().map(|&v| v as f64).collect()
}

/// Generate `count` z-normalized random-walk series of length `n` with
/// standard-normal steps. Deterministic for a fixed seed.
pub fn gen_random_walk(count: u64, n: usize, seed: u64, out_path: &Path) -> Result<DatasetHandle> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut writer = BufWriter::new(File::create(out_path)?);
    let mut walk = vec![0f64; n];
    let mut bytes = Vec::with_capacity(n * 4);
    for _ in 0..count {
        let mut acc = 0.0;
        for slot in walk.iter_mut() {
            let step: f64 = rng.sample(StandardNormal);
            acc += step;
            *slot = acc;
        }
        let z = dumpy_core::znormalize(&walk)?;
        bytes.clear();
        for v in &z {
            bytes.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        writer.write_all(&bytes)?;
    }
    writer.flush()?;
    DatasetHandle::open(out_path, n)
}

/// Noisy-copy queries: pick random rows of `source` and add Gaussian noise
/// scaled to the given signal-to-noise ratio (in dB), then re-normalize.
pub fn gen_noisy_queries(
    source: &DatasetHandle,
    count: u64,
    snr_db: f64,
    seed: u64,
    out_path: &Path,
) -> Result<DatasetHandle> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise_std = (10f64).powf(-snr_db / 20.0);
    let mut writer = BufWriter::new(File::create(out_path)?);
    for _ in 0..count {
        let ordinal = rng.gen_range(0..source.count);
        let row = source.read_row(ordinal)?;
        let noisy: Vec<f64> = row
            .iter()
            .map(|&v| v as f64 + noise_std * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let z = dumpy_core::znormalize(&noisy)?;
        for v in &z {
            writer.write_all(&(*v as f32).to_le_bytes())?;
        }
    }
    writer.flush()?;
    DatasetHandle::open(out_path, source.n)
}

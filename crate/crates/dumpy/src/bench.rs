//! Evaluation harness: brute-force ground truth with on-disk caching,
//! mean average precision, average error ratio, and workload plumbing.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use dumpy_core::metrics::{
    band_radius, dtw_squared_banded, ed_squared_with_cutoff, lb_keogh_squared_with_cutoff,
};
use dumpy_core::{DistanceKind, Envelope};
use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::dataset::{canonicalize, lift, DatasetHandle};
use crate::error::{DumpyError, Result};
use crate::query::Hit;

/// One evaluation run: a query file plus the search mode to drive.
#[derive(Debug, Clone)]
pub struct Workload {
    pub queries: PathBuf,
    pub k: usize,
    pub kind: DistanceKind,
    pub mode: SearchMode,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SearchMode {
    Approx,
    Extended { nbr: usize },
    Fuzzy { nbr: usize, f: f64 },
    Exact,
    ParallelExact { eta: usize, workers: usize },
}

/// The whole dataset in canonical (z-normalized f32) row-major form, so a
/// query batch pays for normalization once.
pub fn load_canonical(ds: &DatasetHandle) -> Result<Vec<f32>> {
    let mut data = Vec::with_capacity(ds.count as usize * ds.n);
    ds.scan_batches(64 << 20, |_, rows| {
        for raw in rows.chunks_exact(ds.n) {
            data.extend_from_slice(&canonicalize(raw)?);
        }
        Ok(())
    })?;
    Ok(data)
}

struct BestK {
    k: usize,
    heap: std::collections::BinaryHeap<(crate::query::OrdF64, u64)>,
}

impl BestK {
    fn new(k: usize) -> Self {
        Self {
            k,
            heap: std::collections::BinaryHeap::with_capacity(k + 1),
        }
    }

    fn cutoff(&self) -> f64 {
        if self.heap.len() >= self.k {
            self.heap.peek().expect("full heap").0 .0
        } else {
            f64::INFINITY
        }
    }

    fn offer(&mut self, sq: f64, ordinal: u64) {
        let entry = (crate::query::OrdF64(sq), ordinal);
        if self.heap.len() < self.k {
            self.heap.push(entry);
        } else if entry < *self.heap.peek().expect("full heap") {
            self.heap.pop();
            self.heap.push(entry);
        }
    }

    fn into_hits(self) -> Vec<Hit> {
        let mut hits: Vec<(crate::query::OrdF64, u64)> = self.heap.into_vec();
        hits.sort_unstable();
        hits.into_iter()
            .map(|(sq, ordinal)| Hit {
                ordinal,
                distance: sq.0.sqrt(),
            })
            .collect()
    }
}

/// Exact kNN over an in-memory canonical dataset, ties broken by ascending
/// ordinal. ED scans with a running-sum cutoff; DTW computes the envelope
/// bound for every candidate first and walks candidates in ascending bound
/// order, so the walk stops at the first bound above the k-th distance.
pub fn brute_force_knn_canonical(
    data: &[f32],
    n: usize,
    query: &[f32],
    k: usize,
    kind: DistanceKind,
) -> Result<Vec<Hit>> {
    let canonical = lift(&canonicalize(query)?);
    let count = data.len() / n;
    let mut best = BestK::new(k);
    let mut values = vec![0f64; n];
    match kind {
        DistanceKind::Ed => {
            for ordinal in 0..count {
                let row = &data[ordinal * n..(ordinal + 1) * n];
                for (v, &r) in values.iter_mut().zip(row) {
                    *v = r as f64;
                }
                if let Some(sq) = ed_squared_with_cutoff(&canonical, &values, best.cutoff()) {
                    best.offer(sq, ordinal as u64);
                }
            }
        }
        DistanceKind::Dtw { window_ratio } => {
            let radius = band_radius(n, window_ratio);
            let env = Envelope::new(&canonical, radius);
            let mut bounds: Vec<(f64, u32)> = Vec::with_capacity(count);
            for ordinal in 0..count {
                let row = &data[ordinal * n..(ordinal + 1) * n];
                for (v, &r) in values.iter_mut().zip(row) {
                    *v = r as f64;
                }
                let lb =
                    lb_keogh_squared_with_cutoff(&env, &values, f64::INFINITY).expect("no cutoff");
                bounds.push((lb, ordinal as u32));
            }
            bounds.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            for (lb, ordinal) in bounds {
                let cutoff = best.cutoff();
                if lb > cutoff {
                    break; // ascending bounds: everything left is pruned
                }
                let row = &data[ordinal as usize * n..(ordinal as usize + 1) * n];
                for (v, &r) in values.iter_mut().zip(row) {
                    *v = r as f64;
                }
                if let Some(sq) = dtw_squared_banded(&canonical, &values, radius, cutoff) {
                    best.offer(sq, ordinal as u64);
                }
            }
        }
    }
    Ok(best.into_hits())
}

/// Exact kNN of one query by full scan of a dataset file.
pub fn brute_force_knn(
    ds: &DatasetHandle,
    query: &[f32],
    k: usize,
    kind: DistanceKind,
) -> Result<Vec<Hit>> {
    let data = load_canonical(ds)?;
    brute_force_knn_canonical(&data, ds.n, query, k, kind)
}

/// Ground truth for a whole query file, parallel across queries over one
/// shared in-memory copy of the dataset.
pub fn brute_force_all(
    ds: &DatasetHandle,
    queries: &[Vec<f32>],
    k: usize,
    kind: DistanceKind,
) -> Result<Vec<Vec<Hit>>> {
    let data = load_canonical(ds)?;
    queries
        .par_iter()
        .map(|q| brute_force_knn_canonical(&data, ds.n, q, k, kind))
        .collect()
}

const GT_MAGIC: &[u8; 4] = b"DGTH";

fn kind_tag(kind: DistanceKind) -> (u8, u16) {
    match kind {
        DistanceKind::Ed => (0, 0),
        DistanceKind::Dtw { window_ratio } => (1, (window_ratio * 1000.0).round() as u16),
    }
}

fn file_digest(path: &Path) -> Result<String> {
    let mut hasher = Sha256::new();
    let mut f = std::fs::File::open(path)?;
    let mut buf = vec![0u8; 1 << 20];
    loop {
        let n = f.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex_prefix(&hasher.finalize()))
}

fn hex_prefix(bytes: &[u8]) -> String {
    bytes[..8].iter().map(|b| format!("{b:02x}")).collect()
}

/// Cache key: dataset bytes, query bytes, k and the distance.
pub fn ground_truth_cache_path(
    cache_dir: &Path,
    ds: &DatasetHandle,
    queries: &Path,
    k: usize,
    kind: DistanceKind,
) -> Result<PathBuf> {
    let (tag, permille) = kind_tag(kind);
    let name = format!(
        "gt_{}_{}_k{}_d{}w{}.bin",
        file_digest(&ds.path)?,
        file_digest(queries)?,
        k,
        tag,
        permille
    );
    Ok(cache_dir.join(name))
}

pub fn save_ground_truth(
    path: &Path,
    k: usize,
    kind: DistanceKind,
    truths: &[Vec<Hit>],
) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    let (tag, permille) = kind_tag(kind);
    f.write_all(GT_MAGIC)?;
    f.write_all(&1u32.to_le_bytes())?;
    f.write_all(&(k as u32).to_le_bytes())?;
    f.write_all(&[tag])?;
    f.write_all(&permille.to_le_bytes())?;
    f.write_all(&(truths.len() as u64).to_le_bytes())?;
    for hits in truths {
        if hits.len() != k {
            return Err(DumpyError::invalid(
                "ground truth rows must have exactly k hits",
            ));
        }
        for h in hits {
            f.write_all(&h.ordinal.to_le_bytes())?;
            f.write_all(&h.distance.to_le_bytes())?;
        }
    }
    f.flush()?;
    Ok(())
}

pub fn load_ground_truth(path: &Path, k: usize, kind: DistanceKind) -> Result<Vec<Vec<Hit>>> {
    let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 4];
    f.read_exact(&mut magic)?;
    if &magic != GT_MAGIC {
        return Err(DumpyError::format("not a ground-truth file"));
    }
    let mut u32b = [0u8; 4];
    f.read_exact(&mut u32b)?;
    if u32::from_le_bytes(u32b) != 1 {
        return Err(DumpyError::format("unsupported ground-truth version"));
    }
    f.read_exact(&mut u32b)?;
    let file_k = u32::from_le_bytes(u32b) as usize;
    let mut tag = [0u8; 1];
    f.read_exact(&mut tag)?;
    let mut permille = [0u8; 2];
    f.read_exact(&mut permille)?;
    let (want_tag, want_permille) = kind_tag(kind);
    if file_k != k || tag[0] != want_tag || u16::from_le_bytes(permille) != want_permille {
        return Err(DumpyError::format(
            "ground-truth file does not match the request",
        ));
    }
    let mut u64b = [0u8; 8];
    f.read_exact(&mut u64b)?;
    let count = u64::from_le_bytes(u64b);
    let mut out = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let mut hits = Vec::with_capacity(k);
        for _ in 0..k {
            let mut ord = [0u8; 8];
            f.read_exact(&mut ord)?;
            let mut dist = [0u8; 8];
            f.read_exact(&mut dist)?;
            hits.push(Hit {
                ordinal: u64::from_le_bytes(ord),
                distance: f64::from_le_bytes(dist),
            });
        }
        out.push(hits);
    }
    Ok(out)
}

/// Ground truth through the cache: computed once per (dataset, queries, k,
/// distance) and reloaded afterwards.
pub fn cached_ground_truth(
    cache_dir: &Path,
    ds: &DatasetHandle,
    queries_path: &Path,
    queries: &[Vec<f32>],
    k: usize,
    kind: DistanceKind,
) -> Result<Vec<Vec<Hit>>> {
    std::fs::create_dir_all(cache_dir)?;
    let path = ground_truth_cache_path(cache_dir, ds, queries_path, k, kind)?;
    if path.exists() {
        if let Ok(t) = load_ground_truth(&path, k, kind) {
            if t.len() == queries.len() {
                return Ok(t);
            }
        }
    }
    let truths = brute_force_all(ds, queries, k, kind)?;
    save_ground_truth(&path, k, kind, &truths)?;
    Ok(truths)
}

/// Distance-tie tolerance for counting a returned series as a true
/// neighbor: equally-distant answers are equally correct.
pub const MAP_TIE_TOLERANCE: f64 = 1e-6;

/// Average precision of one result list against the true kNN set.
pub fn average_precision(result: &[Hit], truth: &[Hit], k: usize) -> f64 {
    let truth_set: std::collections::HashSet<u64> = truth.iter().map(|h| h.ordinal).collect();
    let tie_limit = truth.last().map_or(0.0, |h| h.distance + MAP_TIE_TOLERANCE);
    let mut relevant_seen = 0usize;
    let mut sum = 0.0;
    for i in 0..k {
        let rel = match result.get(i) {
            Some(h) => truth_set.contains(&h.ordinal) || h.distance <= tie_limit,
            None => false,
        };
        if rel {
            relevant_seen += 1;
            sum += relevant_seen as f64 / (i + 1) as f64;
        }
    }
    sum / k as f64
}

/// Mean average precision across queries.
pub fn map_score(results: &[Vec<Hit>], truths: &[Vec<Hit>], k: usize) -> f64 {
    assert_eq!(
        results.len(),
        truths.len(),
        "result and truth counts differ"
    );
    if results.is_empty() {
        return 0.0;
    }
    let total: f64 = results
        .iter()
        .zip(truths)
        .map(|(r, t)| average_precision(r, t, k))
        .sum();
    total / results.len() as f64
}

/// Per-query mean of rank-wise distance ratios, averaged over queries.
/// Ranks whose true distance is zero are skipped and counted.
pub fn error_ratio(results: &[Vec<Hit>], truths: &[Vec<Hit>], k: usize) -> (f64, u64) {
    assert_eq!(
        results.len(),
        truths.len(),
        "result and truth counts differ"
    );
    let mut skipped = 0u64;
    let mut per_query = Vec::with_capacity(results.len());
    for (r, t) in results.iter().zip(truths) {
        let mut sum = 0.0;
        let mut terms = 0usize;
        for i in 0..k {
            let (Some(res), Some(tru)) = (r.get(i), t.get(i)) else {
                skipped += 1;
                continue;
            };
            if tru.distance == 0.0 {
                skipped += 1;
                continue;
            }
            sum += res.distance / tru.distance;
            terms += 1;
        }
        if terms > 0 {
            per_query.push(sum / terms as f64);
        }
    }
    let mean = if per_query.is_empty() {
        1.0
    } else {
        per_query.iter().sum::<f64>() / per_query.len() as f64
    };
    (mean, skipped)
}

/// Aggregate evaluation of one workload run.
#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub queries: usize,
    pub k: usize,
    pub map: f64,
    pub mean_error_ratio: f64,
    pub zero_distance_terms_skipped: u64,
    pub latency_ms_p50: f64,
    pub latency_ms_p95: f64,
    pub latency_ms_p99: f64,
    pub counters: crate::query::SearchCounters,
    pub per_query_ap: Vec<f64>,
}

pub fn evaluate(
    results: &[Vec<Hit>],
    truths: &[Vec<Hit>],
    k: usize,
    latencies_ms: &[f64],
    counters: crate::query::SearchCounters,
) -> EvalReport {
    let per_query_ap: Vec<f64> = results
        .iter()
        .zip(truths)
        .map(|(r, t)| average_precision(r, t, k))
        .collect();
    let map = if per_query_ap.is_empty() {
        0.0
    } else {
        per_query_ap.iter().sum::<f64>() / per_query_ap.len() as f64
    };
    let (mean_error_ratio, skipped) = error_ratio(results, truths, k);
    let mut sorted = latencies_ms.to_vec();
    sorted.sort_by(f64::total_cmp);
    let pct = |p: f64| -> f64 {
        if sorted.is_empty() {
            return 0.0;
        }
        let idx = ((sorted.len() as f64 * p).ceil() as usize).clamp(1, sorted.len());
        sorted[idx - 1]
    };
    EvalReport {
        queries: results.len(),
        k,
        map,
        mean_error_ratio,
        zero_distance_terms_skipped: skipped,
        latency_ms_p50: pct(0.50),
        latency_ms_p95: pct(0.95),
        latency_ms_p99: pct(0.99),
        counters,
        per_query_ap,
    }
}

//! Four-stage concurrent index building.
//!
//! Stage 1 fills the SAX table with a dual raw buffer (reading one block
//! while summarizing the previous) and constructs the first layer. After a
//! stage barrier, Stage 2 materializes first-layer packs while Stage 3
//! grows the deeper subtrees with dynamically scheduled workers. After a
//! second barrier, Stage 4 re-scans the raw data and materializes the
//! remaining packs with interleaved routing and flushing over per-pack
//! staging buffers. Every split decision consumes the completed SAX table,
//! so the resulting index is structurally identical to the serial build for
//! any worker counts.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::mpsc::sync_channel;
use std::sync::Mutex;
use std::time::Instant;

use dumpy_core::series::Breakpoints;

use crate::config::IndexConfig;
use crate::dataset::{canonicalize, DatasetHandle};
use crate::error::{DumpyError, Result};
use crate::saxtable::SaxTable;
use crate::tree::build::{
    assign_layer1_extents, assign_subtree_extents, finish_packs, group_first_layer, grow_subtree,
    GrowContext, Scaffold, SubtreeResult,
};
use crate::tree::storage::{encode_record, preallocate, record_size, write_bytes_at};
use crate::tree::{Index, LeafFile, LeafPack, ROOT};

/// Worker counts and buffer sizes of the build pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct BuildPipelinePlan {
    pub sax_workers: usize,
    pub subtree_workers: usize,
    pub routing_workers: usize,
    pub flush_workers: usize,
    /// Records staged per pack before its buffer flushes as one append.
    pub sbuffer_records: usize,
    /// Size of each half of the dual raw buffer.
    pub raw_buffer_bytes: u64,
}

impl BuildPipelinePlan {
    pub fn with_workers(workers: usize) -> Self {
        let w = workers.max(1);
        Self {
            sax_workers: w,
            subtree_workers: w,
            routing_workers: w,
            flush_workers: w,
            sbuffer_records: 256,
            raw_buffer_bytes: 32 << 20,
        }
    }
}

impl Default for BuildPipelinePlan {
    fn default() -> Self {
        // five build threads is the customary default
        Self::with_workers(5)
    }
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct StageReport {
    pub name: &'static str,
    pub wall_seconds: f64,
    pub cpu_busy_seconds: f64,
    pub io_busy_seconds: f64,
    pub read_bytes: u64,
    pub write_bytes: u64,
    /// Fraction of CPU work that ran while I/O was also in flight.
    pub overlap_fraction: f64,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct PipelineReport {
    pub stages: Vec<StageReport>,
    pub total_wall_seconds: f64,
}

impl PipelineReport {
    /// Report for a strictly sequential run: nothing executes concurrently,
    /// so every overlap fraction is zero by construction.
    pub(crate) fn serial(
        stages: &[(&'static str, f64, u64, u64)],
        total_wall_seconds: f64,
    ) -> Self {
        PipelineReport {
            stages: stages
                .iter()
                .map(|&(name, wall, read_bytes, write_bytes)| StageReport {
                    name,
                    wall_seconds: wall,
                    cpu_busy_seconds: 0.0,
                    io_busy_seconds: 0.0,
                    read_bytes,
                    write_bytes,
                    overlap_fraction: 0.0,
                })
                .collect(),
            total_wall_seconds,
        }
    }

    fn stage(
        name: &'static str,
        wall: f64,
        cpu: f64,
        io: f64,
        read_bytes: u64,
        write_bytes: u64,
    ) -> StageReport {
        let overlap = if cpu > 0.0 {
            ((cpu + io - wall).max(0.0) / cpu).min(1.0)
        } else {
            0.0
        };
        StageReport {
            name,
            wall_seconds: wall,
            cpu_busy_seconds: cpu,
            io_busy_seconds: io,
            read_bytes,
            write_bytes,
            overlap_fraction: overlap,
        }
    }
}

struct SecondsCell(AtomicU64);

impl SecondsCell {
    fn new() -> Self {
        Self(AtomicU64::new(0))
    }
    fn add(&self, seconds: f64) {
        self.0.fetch_add((seconds * 1e9) as u64, Ordering::Relaxed);
    }
    fn get(&self) -> f64 {
        self.0.load(Ordering::Relaxed) as f64 / 1e9
    }
}

/// Stage 1: SAX table via a dual raw buffer, one block read ahead while the
/// previous block is summarized by a worker group.
fn stage1_sax_table(
    ds: &DatasetHandle,
    cfg: &IndexConfig,
    bp: &Breakpoints,
    plan: &BuildPipelinePlan,
    keep_paa: bool,
    io_busy: &SecondsCell,
    cpu_busy: &SecondsCell,
) -> Result<(SaxTable, Option<Vec<f32>>)> {
    let w = cfg.w as usize;
    let n = ds.n;
    let count = ds.count as usize;
    let mut table_data = vec![0u8; count * w];
    let mut paa_data = if keep_paa {
        Some(vec![0f32; count * w])
    } else {
        None
    };

    let rows_per_block = (plan.raw_buffer_bytes / (n as u64 * 4)).max(1);
    let (tx, rx) = sync_channel::<(u64, Vec<f32>)>(1);
    let reader_ds = ds.clone();
    let io_err: Mutex<Option<DumpyError>> = Mutex::new(None);

    std::thread::scope(|scope| -> Result<()> {
        let io_err = &io_err;
        let io_busy_ref = &io_busy;
        scope.spawn(move || {
            let started = Instant::now();
            let res = reader_ds.scan_batches(rows_per_block * n as u64 * 4, |first, rows| {
                tx.send((first, rows.to_vec()))
                    .map_err(|_| DumpyError::invalid("stage 1 consumer hung up"))?;
                Ok(())
            });
            if let Err(e) = res {
                *io_err.lock().expect("error cell") = Some(e);
            }
            io_busy_ref.add(started.elapsed().as_secs_f64());
        });

        let workers = plan.sax_workers.max(1);
        for (first, rows) in rx.iter() {
            let block_rows = rows.len() / n;
            let chunk = (block_rows + workers - 1) / workers;
            // inner barrier per block: the scope join below
            let sax_parts: Vec<(usize, Vec<u8>, Vec<f32>)> = std::thread::scope(|inner| {
                let mut handles = Vec::new();
                for wi in 0..workers {
                    let lo = (wi * chunk).min(block_rows);
                    let hi = ((wi + 1) * chunk).min(block_rows);
                    if lo >= hi {
                        continue;
                    }
                    let rows = &rows;
                    let cpu = &cpu_busy;
                    handles.push(inner.spawn(move || {
                        let started = Instant::now();
                        let mut words = Vec::with_capacity((hi - lo) * w);
                        let mut paas = Vec::with_capacity(if keep_paa { (hi - lo) * w } else { 0 });
                        for r in lo..hi {
                            let raw = &rows[r * n..(r + 1) * n];
                            let canonical = canonicalize(raw).expect("nonempty series");
                            let lifted = crate::dataset::lift(&canonical);
                            let paa = dumpy_core::paa(&lifted, w).expect("w divides n");
                            words.extend(dumpy_core::sax_from_paa(&paa, bp));
                            if keep_paa {
                                paas.extend(paa.iter().map(|&v| v as f32));
                            }
                        }
                        cpu.add(started.elapsed().as_secs_f64());
                        (lo, words, paas)
                    }));
                }
                handles
                    .into_iter()
                    .map(|h| h.join().expect("sax worker"))
                    .collect()
            });
            for (lo, words, paas) in sax_parts {
                let at = (first as usize + lo) * w;
                table_data[at..at + words.len()].copy_from_slice(&words);
                if let Some(p) = paa_data.as_mut() {
                    p[at..at + paas.len()].copy_from_slice(&paas);
                }
            }
        }
        Ok(())
    })?;
    if let Some(e) = io_err.into_inner().expect("error cell") {
        return Err(e);
    }
    Ok((SaxTable::from_raw(w, cfg.b as u8, table_data), paa_data))
}

/// Stages 2 and 4 share this materializer: a reader thread keeps one block
/// in flight (the dual raw buffer) while routing workers move records of
/// their packs into staging buffers and flush workers drain full buffers of
/// their files, with a barrier between the two groups each cycle.
fn staged_materialize(
    ds: &DatasetHandle,
    cfg: &IndexConfig,
    dir: &std::path::Path,
    files: &[LeafFile],
    packs: &[LeafPack],
    primary_target: &[u32],
    duplicates: &std::collections::BTreeMap<u64, Vec<u32>>,
    filter: impl Fn(u32) -> bool + Sync,
    plan: &BuildPipelinePlan,
    bp: &Breakpoints,
    io_busy: &SecondsCell,
    cpu_busy: &SecondsCell,
    write_bytes: &AtomicU64,
) -> Result<Vec<u32>> {
    let rec = record_size(cfg);
    let n = ds.n;
    for file in files {
        preallocate(&dir.join("leaves").join(&file.name), file.allocated)?;
    }

    struct PackBuffer {
        staged: Vec<u8>,
        written: u32,
    }
    let buffers: Vec<Mutex<PackBuffer>> = (0..packs.len())
        .map(|_| {
            Mutex::new(PackBuffer {
                staged: Vec::new(),
                written: 0,
            })
        })
        .collect();

    let rows_per_block = (plan.raw_buffer_bytes / (n as u64 * 4)).max(1);
    let (tx, rx) = sync_channel::<(u64, Vec<f32>)>(1);
    let reader_ds = ds.clone();
    let io_err: Mutex<Option<DumpyError>> = Mutex::new(None);
    let routing = plan.routing_workers.max(1);
    let flushers = plan.flush_workers.max(1);

    let flush_pack = |id: usize, buf: &mut PackBuffer| -> Result<()> {
        if buf.staged.is_empty() {
            return Ok(());
        }
        let pack = &packs[id];
        let offset = pack.extent.offset + buf.written as u64 * rec as u64;
        let path = dir
            .join("leaves")
            .join(&files[pack.extent.file as usize].name);
        write_bytes_at(&path, offset, &buf.staged)?;
        write_bytes.fetch_add(buf.staged.len() as u64, Ordering::Relaxed);
        buf.written += (buf.staged.len() / rec) as u32;
        buf.staged.clear();
        Ok(())
    };

    std::thread::scope(|scope| {
        let io_err_ref = &io_err;
        scope.spawn(move || {
            let started = Instant::now();
            let res = reader_ds.scan_batches(rows_per_block * n as u64 * 4, |first, rows| {
                tx.send((first, rows.to_vec()))
                    .map_err(|_| DumpyError::invalid("stage 4 consumer hung up"))?;
                Ok(())
            });
            if let Err(e) = res {
                *io_err_ref.lock().expect("error cell") = Some(e);
            }
            io_busy.add(started.elapsed().as_secs_f64());
        });

        for (first, rows) in rx.iter() {
            let block_rows = rows.len() / n;
            // routing phase: pack-partitioned workers encode and stage
            std::thread::scope(|inner| {
                for wi in 0..routing {
                    let rows = &rows;
                    let buffers = &buffers;
                    let filter = &filter;
                    inner.spawn(move || {
                        let started = Instant::now();
                        let mut record = Vec::with_capacity(rec);
                        for r in 0..block_rows {
                            let ordinal = first + r as u64;
                            let mut mine = false;
                            let primary = primary_target[ordinal as usize];
                            if filter(primary) && primary as usize % routing == wi {
                                mine = true;
                            }
                            let dups = duplicates.get(&ordinal);
                            let dup_mine = dups.map_or(false, |v| {
                                v.iter().any(|&p| filter(p) && p as usize % routing == wi)
                            });
                            if !mine && !dup_mine {
                                continue;
                            }
                            let raw = &rows[r * n..(r + 1) * n];
                            let canonical = canonicalize(raw).expect("nonempty series");
                            let sax = crate::saxtable::sax_word_of(&canonical, cfg.w as usize, bp)
                                .expect("w divides n");
                            record.clear();
                            encode_record(&mut record, ordinal, &canonical, &sax);
                            if mine {
                                buffers[primary as usize]
                                    .lock()
                                    .expect("pack buffer")
                                    .staged
                                    .extend_from_slice(&record);
                            }
                            if let Some(v) = dups {
                                for &p in v {
                                    if filter(p) && p as usize % routing == wi {
                                        buffers[p as usize]
                                            .lock()
                                            .expect("pack buffer")
                                            .staged
                                            .extend_from_slice(&record);
                                    }
                                }
                            }
                        }
                        cpu_busy.add(started.elapsed().as_secs_f64());
                    });
                }
            });
            // flush phase: file-partitioned workers drain full buffers
            std::thread::scope(|inner| {
                for wi in 0..flushers {
                    let buffers = &buffers;
                    let flush_pack = &flush_pack;
                    let io_err_ref = &io_err;
                    inner.spawn(move || {
                        let started = Instant::now();
                        for (id, buffer) in buffers.iter().enumerate() {
                            if packs[id].extent.file as usize % flushers != wi {
                                continue;
                            }
                            let mut buf = buffer.lock().expect("pack buffer");
                            if buf.staged.len() >= plan.sbuffer_records * rec {
                                if let Err(e) = flush_pack(id, &mut buf) {
                                    *io_err_ref.lock().expect("error cell") = Some(e);
                                }
                            }
                        }
                        io_busy.add(started.elapsed().as_secs_f64());
                    });
                }
            });
        }
    });
    if let Some(e) = io_err.into_inner().expect("error cell") {
        return Err(e);
    }

    // drain every remaining buffer
    let started = Instant::now();
    let mut written = Vec::with_capacity(packs.len());
    for (id, buffer) in buffers.iter().enumerate() {
        let mut buf = buffer.lock().expect("pack buffer");
        flush_pack(id, &mut buf)?;
        written.push(buf.written);
    }
    io_busy.add(started.elapsed().as_secs_f64());
    Ok(written)
}

/// Concurrent build producing an index structurally identical to
/// [`crate::build_index`] for any worker counts.
pub fn parallel_build(
    ds: &DatasetHandle,
    cfg: IndexConfig,
    dir: &std::path::Path,
    plan: &BuildPipelinePlan,
) -> Result<(Index, PipelineReport)> {
    cfg.validate()?;
    if ds.n != cfg.n as usize {
        return Err(DumpyError::invalid(
            "dataset series length differs from config",
        ));
    }
    std::fs::create_dir_all(dir.join("leaves"))?;
    let bp = Breakpoints::new(cfg.cardinality())?;
    let total_started = Instant::now();
    let mut stages = Vec::new();

    // --- Stage 1: SAX table + first layer ---
    let s1 = Instant::now();
    let s1_io = SecondsCell::new();
    let s1_cpu = SecondsCell::new();
    let (table, paa) = stage1_sax_table(ds, &cfg, &bp, plan, cfg.fuzzy_f > 0.0, &s1_io, &s1_cpu)?;
    let ctx = GrowContext {
        rows: table.rows(),
        paa: paa.as_deref(),
        cfg: &cfg,
        bp: &bp,
    };
    let layer1 = group_first_layer(&table, &cfg);
    let mut scaffold = Scaffold::first_layer(&ctx, layer1);
    let first_layer_packs = scaffold.packs.len();
    scaffold.assign_duplicates(&cfg, 0..first_layer_packs);
    let mut files = assign_layer1_extents(&mut scaffold, &cfg);
    stages.push(PipelineReport::stage(
        "stage1-sax-and-first-layer",
        s1.elapsed().as_secs_f64(),
        s1_cpu.get(),
        s1_io.get(),
        ds.count * ds.n as u64 * 4,
        0,
    ));
    // stage barrier 1: the table, first layer and layer-1 extents are final

    // --- Stage 2 (materialize first-layer packs) || Stage 3 (subtrees) ---
    let s23 = Instant::now();
    let s2_io = SecondsCell::new();
    let s2_cpu = SecondsCell::new();
    let s3_cpu = SecondsCell::new();
    let s2_write = AtomicU64::new(0);
    let pending = std::mem::take(&mut scaffold.pending);
    let queue: Mutex<std::collections::VecDeque<(u32, Vec<u32>, Vec<u32>)>> =
        Mutex::new(pending.into_iter().collect());
    let results: Mutex<Vec<(u32, SubtreeResult)>> = Mutex::new(Vec::new());
    let stage2_written: Mutex<Option<Result<Vec<u32>>>> = Mutex::new(None);

    let layer1_filter = {
        let layers: Vec<u8> = scaffold.packs.iter().map(|p| p.layer).collect();
        // subtree series still carry the unassigned sentinel during stage 2
        move |p: u32| (p as usize) < layers.len() && layers[p as usize] == 1
    };
    let root_isax = scaffold.internals[ROOT as usize].isax.clone();
    let root_csl = scaffold.internals[ROOT as usize].csl.clone();

    std::thread::scope(|scope| {
        // Stage 2: one I/O-bound pass over the raw data for layer-1 packs
        scope.spawn(|| {
            let res = staged_materialize(
                ds,
                &cfg,
                dir,
                &files,
                &scaffold.packs,
                &scaffold.primary_target,
                &scaffold.duplicates,
                &layer1_filter,
                plan,
                &bp,
                &s2_io,
                &s2_cpu,
                &s2_write,
            );
            *stage2_written.lock().expect("stage 2 cell") = Some(res);
        });
        // Stage 3: dynamically scheduled subtree builders
        for _ in 0..plan.subtree_workers.max(1) {
            let queue = &queue;
            let results = &results;
            let ctx = &ctx;
            let root_isax = &root_isax;
            let root_csl = &root_csl;
            let s3_cpu = &s3_cpu;
            scope.spawn(move || loop {
                let job = queue.lock().expect("work queue").pop_front();
                let Some((sid, members, shadows)) = job else {
                    break;
                };
                let started = Instant::now();
                let isax = root_isax.extend(root_csl, sid);
                let result = grow_subtree(ctx, isax, members, shadows);
                s3_cpu.add(started.elapsed().as_secs_f64());
                results.lock().expect("results").push((sid, result));
            });
        }
    });
    // stage barrier 2: subtrees built, first-layer packs on disk
    let layer1_written = stage2_written
        .into_inner()
        .expect("stage 2 cell")
        .expect("stage 2 ran")?;
    stages.push(PipelineReport::stage(
        "stage2-materialize-first-layer",
        s23.elapsed().as_secs_f64(),
        s2_cpu.get(),
        s2_io.get(),
        ds.count * ds.n as u64 * 4,
        s2_write.load(Ordering::Relaxed),
    ));
    stages.push(PipelineReport::stage(
        "stage3-grow-subtrees",
        s23.elapsed().as_secs_f64(),
        s3_cpu.get(),
        0.0,
        0,
        0,
    ));

    // splice subtrees in ascending sid order: arena layout and duplicate
    // assignment order become identical to the serial build
    let mut results = results.into_inner().expect("results");
    results.sort_by_key(|(sid, _)| *sid);
    for (sid, result) in results {
        let before = scaffold.packs.len();
        scaffold.append_subtree(sid, result);
        let after = scaffold.packs.len();
        scaffold.assign_duplicates(&cfg, before..after);
    }
    assign_subtree_extents(&mut scaffold, &cfg, &mut files);

    // --- Stage 4: materialize the deeper packs ---
    let s4 = Instant::now();
    let s4_io = SecondsCell::new();
    let s4_cpu = SecondsCell::new();
    let s4_write = AtomicU64::new(0);
    let deep_filter = {
        let layers: Vec<u8> = scaffold.packs.iter().map(|p| p.layer).collect();
        move |p: u32| layers[p as usize] != 1
    };
    let deep_written = staged_materialize(
        ds,
        &cfg,
        dir,
        &files,
        &scaffold.packs,
        &scaffold.primary_target,
        &scaffold.duplicates,
        &deep_filter,
        plan,
        &bp,
        &s4_io,
        &s4_cpu,
        &s4_write,
    )?;
    stages.push(PipelineReport::stage(
        "stage4-materialize-subtrees",
        s4.elapsed().as_secs_f64(),
        s4_cpu.get(),
        s4_io.get(),
        ds.count * ds.n as u64 * 4,
        s4_write.load(Ordering::Relaxed),
    ));

    let written: Vec<u32> = layer1_written
        .iter()
        .copied()
        .chain(std::iter::repeat(0))
        .take(scaffold.packs.len())
        .zip(deep_written.iter().copied().chain(std::iter::repeat(0)))
        .map(|(a, b)| a + b)
        .collect();
    finish_packs(&mut scaffold.packs, &scaffold.planned, &written);

    let index = Index {
        cfg,
        dir: dir.to_path_buf(),
        breakpoints: bp,
        internals: scaffold.internals,
        packs: scaffold.packs,
        files,
        sax: table,
        duplicates: scaffold.duplicates,
    };
    index.save()?;
    let report = PipelineReport {
        stages,
        total_wall_seconds: total_started.elapsed().as_secs_f64(),
    };
    Ok((index, report))
}

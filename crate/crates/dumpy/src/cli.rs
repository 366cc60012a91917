//! Command-line interface: dataset generation, SAX tables, index building,
//! query execution, evaluation against cached ground truth, and index
//! statistics.

use std::path::PathBuf;
use std::time::Instant;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::bench::{cached_ground_truth, evaluate, SearchMode};
use crate::config::IndexConfig;
use crate::dataset::{gen_noisy_queries, gen_random_walk, DatasetHandle};
use crate::pbuild::{parallel_build, BuildPipelinePlan};
use crate::query::fuzzy::fuzzy_search;
use crate::query::parallel::parallel_exact_search;
use crate::query::{PreparedQuery, QueryResult};
use crate::tree::Index;
use crate::{approx_search, exact_search, extended_approx_search};
use dumpy_core::DistanceKind;

#[derive(Parser)]
#[command(
    name = "dumpy",
    about = "Disk-backed adaptive multi-ary iSAX index for data series",
    version
)]
pub struct Cli {
    /// TOML file with IndexConfig fields; flags override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct ConfigOverrides {
    /// Series length.
    #[arg(long)]
    pub n: Option<u32>,
    /// SAX segments per series.
    #[arg(long)]
    pub w: Option<u16>,
    /// Bits per SAX symbol (cardinality 2^b).
    #[arg(long)]
    pub b: Option<u16>,
    /// Leaf size threshold.
    #[arg(long)]
    pub th: Option<u32>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub f_l: Option<f64>,
    #[arg(long)]
    pub f_r: Option<f64>,
    /// Demotion budget factor for leaf packing.
    #[arg(long)]
    pub rho: Option<f64>,
}

impl ConfigOverrides {
    fn apply(&self, cfg: &mut IndexConfig) {
        if let Some(n) = self.n {
            cfg.n = n;
        }
        if let Some(w) = self.w {
            cfg.w = w;
        }
        if let Some(b) = self.b {
            cfg.b = b;
        }
        if let Some(th) = self.th {
            cfg.th = th;
        }
        if let Some(alpha) = self.alpha {
            cfg.alpha = alpha;
        }
        if let Some(f_l) = self.f_l {
            cfg.f_l = f_l;
        }
        if let Some(f_r) = self.f_r {
            cfg.f_r = f_r;
        }
        if let Some(rho) = self.rho {
            cfg.rho = rho;
        }
    }
}

#[derive(ValueEnum, Clone, Copy, Debug)]
pub enum DistArg {
    Ed,
    Dtw,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
pub enum ModeArg {
    Approx,
    Extended,
    Fuzzy,
    Exact,
    PExact,
}

#[derive(Subcommand)]
pub enum Command {
    /// Generate a z-normalized random-walk dataset (flat f32 binary).
    Gen {
        #[arg(long)]
        count: u64,
        #[arg(long, default_value_t = 256)]
        len: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Derive noisy copies of rows of this dataset instead.
        #[arg(long)]
        noisy_copies_of: Option<PathBuf>,
        /// Signal-to-noise ratio in dB for noisy copies.
        #[arg(long, default_value_t = 20.0)]
        snr_db: f64,
    },
    /// Build a SAX table for a dataset and write it to a file.
    Sax {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        overrides: ConfigOverrides,
    },
    /// Build the index.
    Build {
        #[arg(long)]
        dataset: PathBuf,
        /// Index directory (defaults to $DUMPY_DIR).
        #[arg(long)]
        dir: Option<PathBuf>,
        /// Staged concurrent build instead of the serial reference build.
        #[arg(long, conflicts_with = "serial")]
        parallel: bool,
        #[arg(long)]
        serial: bool,
        /// Worker count for the parallel build.
        #[arg(long, default_value_t = 5)]
        workers: usize,
        /// Fuzzy boundary fraction; duplicates near-boundary series.
        #[arg(long)]
        fuzzy: Option<f64>,
        /// Binary-structure baseline: single-segment max-variance splits,
        /// no leaf packing.
        #[arg(long)]
        binary_split: bool,
        /// Print the per-stage pipeline report.
        #[arg(long)]
        report: bool,
        #[command(flatten)]
        overrides: ConfigOverrides,
    },
    /// Run queries against an index and print or store the results.
    Query {
        /// Index directory (defaults to $DUMPY_DIR).
        #[arg(long)]
        dir: Option<PathBuf>,
        /// Query file, flat f32 binary with the index's series length.
        #[arg(long)]
        queries: PathBuf,
        #[arg(long, value_enum, default_value_t = ModeArg::Exact)]
        mode: ModeArg,
        #[arg(long, default_value_t = 1)]
        k: usize,
        /// Pack budget for the approximate modes.
        #[arg(long, default_value_t = 25)]
        nbr: usize,
        /// Fuzzy band fraction for --mode fuzzy.
        #[arg(long, default_value_t = 0.3)]
        f: f64,
        #[arg(long, value_enum, default_value_t = DistArg::Ed)]
        dist: DistArg,
        /// DTW window as a fraction of the series length.
        #[arg(long, default_value_t = 0.10)]
        window: f64,
        /// Buffer slots for --mode p-exact.
        #[arg(long, default_value_t = 24)]
        eta: usize,
        /// Worker threads for --mode p-exact.
        #[arg(long, default_value_t = 8)]
        workers: usize,
        /// Write results as JSON lines here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a workload and score it against (cached) brute-force truth.
    Eval {
        #[arg(long)]
        dir: Option<PathBuf>,
        /// Dataset backing the index, for the brute-force oracle.
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        queries: PathBuf,
        #[arg(long, value_enum, default_value_t = ModeArg::Exact)]
        mode: ModeArg,
        #[arg(long, default_value_t = 1)]
        k: usize,
        #[arg(long, default_value_t = 25)]
        nbr: usize,
        #[arg(long, default_value_t = 0.3)]
        f: f64,
        #[arg(long, value_enum, default_value_t = DistArg::Ed)]
        dist: DistArg,
        #[arg(long, default_value_t = 0.10)]
        window: f64,
        #[arg(long, default_value_t = 24)]
        eta: usize,
        #[arg(long, default_value_t = 8)]
        workers: usize,
        /// Ground-truth cache directory (defaults to <dir>/gt-cache).
        #[arg(long)]
        cache: Option<PathBuf>,
        /// Append the JSON report here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print index structure statistics.
    Stats {
        #[arg(long)]
        dir: Option<PathBuf>,
        #[arg(long)]
        json: bool,
    },
    /// Brute-force ground truth for a query file, cached on disk.
    Oracle {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        queries: PathBuf,
        #[arg(long, default_value_t = 1)]
        k: usize,
        #[arg(long, value_enum, default_value_t = DistArg::Ed)]
        dist: DistArg,
        #[arg(long, default_value_t = 0.10)]
        window: f64,
        /// Series length of the dataset (required without an index).
        #[arg(long, default_value_t = 256)]
        len: usize,
        #[arg(long)]
        cache: PathBuf,
    },
}

fn index_dir(flag: Option<PathBuf>) -> anyhow::Result<PathBuf> {
    if let Some(d) = flag {
        return Ok(d);
    }
    if let Ok(d) = std::env::var("DUMPY_DIR") {
        return Ok(PathBuf::from(d));
    }
    bail!("no index directory: pass --dir or set DUMPY_DIR")
}

fn base_config(path: &Option<PathBuf>) -> anyhow::Result<IndexConfig> {
    match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .with_context(|| format!("reading config {}", p.display()))?;
            Ok(IndexConfig::from_toml(&text)?)
        }
        None => Ok(IndexConfig::default()),
    }
}

fn distance(dist: DistArg, window: f64) -> DistanceKind {
    match dist {
        DistArg::Ed => DistanceKind::Ed,
        DistArg::Dtw => DistanceKind::Dtw {
            window_ratio: window,
        },
    }
}

fn mode(mode: ModeArg, nbr: usize, f: f64, eta: usize, workers: usize) -> SearchMode {
    match mode {
        ModeArg::Approx => SearchMode::Approx,
        ModeArg::Extended => SearchMode::Extended { nbr },
        ModeArg::Fuzzy => SearchMode::Fuzzy { nbr, f },
        ModeArg::Exact => SearchMode::Exact,
        ModeArg::PExact => SearchMode::ParallelExact { eta, workers },
    }
}

fn run_mode(
    index: &Index,
    pq: &PreparedQuery,
    k: usize,
    mode: SearchMode,
) -> crate::error::Result<QueryResult> {
    match mode {
        SearchMode::Approx => approx_search(index, pq, k),
        SearchMode::Extended { nbr } => extended_approx_search(index, pq, k, nbr),
        SearchMode::Fuzzy { nbr, f } => fuzzy_search(index, pq, k, nbr, f),
        SearchMode::Exact => exact_search(index, pq, k),
        SearchMode::ParallelExact { eta, workers } => {
            parallel_exact_search(index, pq, k, eta, workers)
        }
    }
}

/// Run a workload through one search mode; returns per-query results and
/// latencies in milliseconds.
pub fn run_workload(
    index: &Index,
    workload: &crate::bench::Workload,
) -> crate::error::Result<(Vec<QueryResult>, Vec<f64>)> {
    let queries = DatasetHandle::open(&workload.queries, index.config().n as usize)?.read_all()?;
    let mut results = Vec::with_capacity(queries.len());
    let mut latencies = Vec::with_capacity(queries.len());
    for q in &queries {
        let pq = PreparedQuery::new(index, q, workload.kind)?;
        let started = Instant::now();
        let res = run_mode(index, &pq, workload.k, workload.mode)?;
        latencies.push(started.elapsed().as_secs_f64() * 1e3);
        results.push(res);
    }
    Ok((results, latencies))
}

pub fn main_with(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Gen {
            count,
            len,
            seed,
            out,
            noisy_copies_of,
            snr_db,
        } => {
            let ds = match noisy_copies_of {
                Some(src) => {
                    let source = DatasetHandle::open(&src, len)?;
                    gen_noisy_queries(&source, count, snr_db, seed, &out)?
                }
                None => gen_random_walk(count, len, seed, &out)?,
            };
            println!(
                "wrote {} series of length {} ({} bytes) to {}",
                ds.count,
                ds.n,
                ds.count * ds.row_bytes() as u64,
                out.display()
            );
        }
        Command::Sax {
            dataset,
            out,
            overrides,
        } => {
            let mut cfg = base_config(&cli.config)?;
            overrides.apply(&mut cfg);
            cfg.validate()?;
            let ds = DatasetHandle::open(&dataset, cfg.n as usize)?;
            let bp = dumpy_core::series::Breakpoints::new(cfg.cardinality())?;
            let (table, _) = crate::saxtable::build_sax_table(&ds, &cfg, &bp, false)?;
            table.save(&out)?;
            println!(
                "wrote SAX table: {} rows, w={}, b={}",
                table.count(),
                cfg.w,
                cfg.b
            );
        }
        Command::Build {
            dataset,
            dir,
            parallel,
            serial: _,
            workers,
            fuzzy,
            binary_split,
            report,
            overrides,
        } => {
            let dir = index_dir(dir)?;
            let mut cfg = base_config(&cli.config)?;
            overrides.apply(&mut cfg);
            if let Some(f) = fuzzy {
                cfg.fuzzy_f = f;
            }
            cfg.binary_split = binary_split;
            cfg.validate()?;
            let ds = DatasetHandle::open(&dataset, cfg.n as usize)?;
            let started = Instant::now();
            if parallel {
                let plan = BuildPipelinePlan::with_workers(workers);
                let (index, pipeline) = parallel_build(&ds, cfg, &dir, &plan)?;
                println!(
                    "built {} series into {} leaves in {:.2}s (parallel, {workers} workers)",
                    index.stats().series,
                    index.stats().leaf_count,
                    started.elapsed().as_secs_f64()
                );
                if report {
                    for s in &pipeline.stages {
                        println!(
                            "  {:<32} wall {:>8.3}s cpu {:>8.3}s io {:>8.3}s overlap {:>5.1}% read {:>12} written {:>12}",
                            s.name,
                            s.wall_seconds,
                            s.cpu_busy_seconds,
                            s.io_busy_seconds,
                            s.overlap_fraction * 100.0,
                            s.read_bytes,
                            s.write_bytes
                        );
                    }
                }
            } else {
                let (index, pipeline) =
                    crate::tree::build::build_index_instrumented(&ds, cfg, &dir)?;
                println!(
                    "built {} series into {} leaves in {:.2}s (serial)",
                    index.stats().series,
                    index.stats().leaf_count,
                    started.elapsed().as_secs_f64()
                );
                if report {
                    for s in &pipeline.stages {
                        println!(
                            "  {:<32} wall {:>8.3}s overlap {:>5.1}% read {:>12} written {:>12}",
                            s.name,
                            s.wall_seconds,
                            s.overlap_fraction * 100.0,
                            s.read_bytes,
                            s.write_bytes
                        );
                    }
                }
            }
        }
        Command::Query {
            dir,
            queries,
            mode: m,
            k,
            nbr,
            f,
            dist,
            window,
            eta,
            workers,
            out,
        } => {
            let dir = index_dir(dir)?;
            let index = Index::load(&dir)?;
            let workload = crate::bench::Workload {
                queries: queries.clone(),
                k,
                kind: distance(dist, window),
                mode: mode(m, nbr, f, eta, workers),
            };
            let (results, latencies) = run_workload(&index, &workload)?;
            let mut sink: Box<dyn std::io::Write> = match &out {
                Some(p) => Box::new(std::io::BufWriter::new(std::fs::File::create(p)?)),
                None => Box::new(std::io::stdout().lock()),
            };
            for (qi, (res, ms)) in results.iter().zip(&latencies).enumerate() {
                let line = serde_json::json!({
                    "query": qi,
                    "latency_ms": ms,
                    "truncated": res.truncated,
                    "counters": res.counters,
                    "hits": res.hits,
                });
                writeln!(sink, "{line}")?;
            }
            sink.flush()?;
        }
        Command::Eval {
            dir,
            dataset,
            queries,
            mode: m,
            k,
            nbr,
            f,
            dist,
            window,
            eta,
            workers,
            cache,
            out,
        } => {
            let dir = index_dir(dir)?;
            let index = Index::load(&dir)?;
            let ds = DatasetHandle::open(&dataset, index.config().n as usize)?;
            let qs = DatasetHandle::open(&queries, index.config().n as usize)?.read_all()?;
            let kind = distance(dist, window);
            let workload = crate::bench::Workload {
                queries: queries.clone(),
                k,
                kind,
                mode: mode(m, nbr, f, eta, workers),
            };
            let cache_dir = cache.unwrap_or_else(|| dir.join("gt-cache"));
            let truths = cached_ground_truth(&cache_dir, &ds, &queries, &qs, k, kind)?;
            let (results, latencies) = run_workload(&index, &workload)?;
            let hit_lists: Vec<Vec<crate::query::Hit>> =
                results.iter().map(|r| r.hits.clone()).collect();
            let mut counters = crate::query::SearchCounters::default();
            for r in &results {
                counters += r.counters;
            }
            let report = evaluate(&hit_lists, &truths, k, &latencies, counters);
            println!("queries          {}", report.queries);
            println!("k                {}", report.k);
            println!("MAP              {:.4}", report.map);
            println!("mean error ratio {:.4}", report.mean_error_ratio);
            println!(
                "latency ms       p50 {:.3}  p95 {:.3}  p99 {:.3}",
                report.latency_ms_p50, report.latency_ms_p95, report.latency_ms_p99
            );
            println!(
                "counters         packs {}  series {}  bytes {}  lb {}",
                report.counters.packs_visited,
                report.counters.series_scanned,
                report.counters.bytes_read,
                report.counters.lb_computations
            );
            if let Some(p) = out {
                let mut file = std::fs::OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(p)?;
                use std::io::Write;
                writeln!(file, "{}", serde_json::to_string(&report)?)?;
            }
        }
        Command::Stats { dir, json } => {
            let dir = index_dir(dir)?;
            let index = Index::load(&dir)?;
            let stats = index.stats();
            if json {
                println!("{}", serde_json::to_string_pretty(&stats)?);
            } else {
                println!("leaves           {}", stats.leaf_count);
                println!("nodes            {}", stats.node_count);
                println!("height           {}", stats.height);
                println!("series           {}", stats.series);
                println!("fuzzy copies     {}", stats.duplicate_copies);
                println!("avg fill factor  {:.2}%", stats.avg_fill_factor * 100.0);
                println!("oversized leaves {}", stats.oversized_leaves);
                println!("memory bytes     {}", stats.memory_bytes);
            }
        }
        Command::Oracle {
            dataset,
            queries,
            k,
            dist,
            window,
            len,
            cache,
        } => {
            let ds = DatasetHandle::open(&dataset, len)?;
            let qs = DatasetHandle::open(&queries, len)?.read_all()?;
            let kind = distance(dist, window);
            let truths = cached_ground_truth(&cache, &ds, &queries, &qs, k, kind)?;
            let path = crate::bench::ground_truth_cache_path(&cache, &ds, &queries, k, kind)?;
            println!(
                "ground truth for {} queries cached at {}",
                truths.len(),
                path.display()
            );
        }
    }
    Ok(())
}

//! Build-time invariants: partition and prefix soundness, pack bounds,
//! determinism, fuzzy-duplication audits, and serial/parallel equivalence.

use std::collections::HashMap;

use dumpy::config::IndexConfig;
use dumpy::dataset::{canonicalize, gen_random_walk, lift};
use dumpy::pbuild::{parallel_build, BuildPipelinePlan};
use dumpy::tree::storage::{decode_record, read_pack_bytes, record_size, FilePool};
use dumpy::tree::Index;
use dumpy::{build_index, DatasetHandle};
use tempfile::TempDir;

fn small_cfg() -> IndexConfig {
    IndexConfig {
        n: 64,
        w: 8,
        b: 8,
        th: 50,
        ..Default::default()
    }
}

fn build_corpus(count: u64, seed: u64, cfg: &IndexConfig, dir: &TempDir) -> (DatasetHandle, Index) {
    let data_path = dir.path().join("data.bin");
    let ds = gen_random_walk(count, cfg.n as usize, seed, &data_path).unwrap();
    let index_dir = dir.path().join("index");
    let index = build_index(&ds, cfg.clone(), &index_dir).unwrap();
    (ds, index)
}

/// Every stored record, keyed by pack, via the public storage helpers.
fn all_records(index: &Index) -> HashMap<u32, Vec<u64>> {
    let mut pool = FilePool::reader();
    let rec = record_size(index.config());
    let mut out = HashMap::new();
    for (id, pack) in index
        .packs_for_audit()
        .into_iter()
        .enumerate()
        .filter_map(|(i, p)| p.map(|p| (i as u32, p)))
    {
        let bytes = read_pack_bytes(index, pack, &mut pool).unwrap();
        let mut ordinals = Vec::new();
        for slot in 0..pack.len {
            if pack.is_deleted(slot) {
                continue;
            }
            let view = decode_record(&bytes[slot as usize * rec..], index.config());
            ordinals.push(view.ordinal);
        }
        out.insert(id, ordinals);
    }
    out
}

#[test]
fn partition_and_prefix_soundness() {
    let dir = TempDir::new().unwrap();
    let cfg = small_cfg();
    let (ds, index) = build_corpus(3000, 41, &cfg, &dir);

    // every series lands in exactly one pack (no fuzzy copies configured)
    let records = all_records(&index);
    let mut seen = vec![0u32; ds.count as usize];
    for ordinals in records.values() {
        for &o in ordinals {
            seen[o as usize] += 1;
        }
    }
    assert!(seen.iter().all(|&c| c == 1), "partition soundness violated");

    // every stored series' SAX word extends its pack's iSAX word, and the
    // record's sax matches the table
    let mut pool = FilePool::reader();
    let rec = record_size(index.config());
    for (_, pack) in index.packs_for_audit().into_iter().enumerate() {
        let Some(pack) = pack else { continue };
        let bytes = read_pack_bytes(&index, pack, &mut pool).unwrap();
        for slot in 0..pack.len {
            let view = decode_record(&bytes[slot as usize * rec..], index.config());
            assert!(
                pack.isax.is_prefix_of(view.sax),
                "prefix soundness violated"
            );
            assert_eq!(view.sax, index.sax_table().row(view.ordinal));
        }
    }
}

#[test]
fn pack_bounds_hold() {
    let dir = TempDir::new().unwrap();
    let cfg = small_cfg();
    let (_, index) = build_corpus(4000, 42, &cfg, &dir);
    let mut leaves = 0;
    for pack in index.packs_for_audit().into_iter().flatten() {
        leaves += 1;
        if !pack.oversized {
            assert!(pack.live <= cfg.th, "pack exceeds threshold");
        }
        let budget = (cfg.rho * index.parent_lambda_of_pack(pack)) as u8;
        assert!(pack.demotion_bits <= budget, "demotion bits exceed budget");
    }
    assert!(leaves > 1);
}

#[test]
fn serial_build_is_deterministic() {
    let dir = TempDir::new().unwrap();
    let cfg = small_cfg();
    let data_path = dir.path().join("data.bin");
    let ds = gen_random_walk(2000, cfg.n as usize, 7, &data_path).unwrap();
    let a = build_index(&ds, cfg.clone(), &dir.path().join("a")).unwrap();
    let b = build_index(&ds, cfg.clone(), &dir.path().join("b")).unwrap();
    assert!(a.structure_eq(&b));
    // leaf files byte-identical
    for f in 0..a.file_count() {
        let fa = std::fs::read(a.file_path(f)).unwrap();
        let fb = std::fs::read(b.file_path(f)).unwrap();
        assert_eq!(fa, fb, "leaf file {f} differs");
    }
}

#[test]
fn parallel_build_matches_serial_structure() {
    let dir = TempDir::new().unwrap();
    let cfg = small_cfg();
    let data_path = dir.path().join("data.bin");
    let ds = gen_random_walk(3000, cfg.n as usize, 17, &data_path).unwrap();
    let serial = build_index(&ds, cfg.clone(), &dir.path().join("serial")).unwrap();
    for workers in [1usize, 2, 3] {
        let pdir = dir.path().join(format!("par{workers}"));
        let plan = BuildPipelinePlan::with_workers(workers);
        let (parallel, report) = parallel_build(&ds, cfg.clone(), &pdir, &plan).unwrap();
        assert!(
            parallel.structure_eq(&serial),
            "structure differs at {workers} workers"
        );
        for f in 0..serial.file_count() {
            let fa = std::fs::read(serial.file_path(f)).unwrap();
            let fb = std::fs::read(parallel.file_path(f)).unwrap();
            assert_eq!(fa, fb, "leaf file {f} differs at {workers} workers");
        }
        assert_eq!(report.stages.len(), 4);
        // one extra sequential pass for stage 2, by accounting
        assert_eq!(report.stages[1].read_bytes, ds.count * ds.n as u64 * 4);
        // every series is written exactly once across stages 2 and 4
        let rec = record_size(serial.config()) as u64;
        assert_eq!(
            report.stages[1].write_bytes + report.stages[3].write_bytes,
            ds.count * rec
        );
    }
}

#[test]
fn oversized_fallback_on_identical_series() {
    let dir = TempDir::new().unwrap();
    let cfg = IndexConfig {
        n: 32,
        w: 4,
        b: 8,
        th: 10,
        ..Default::default()
    };
    // constant-step walk: every z-normalized series is identical
    let data_path = dir.path().join("data.bin");
    let mut bytes = Vec::new();
    let series: Vec<f32> = {
        let raw: Vec<f64> = (0..32).map(|i| i as f64).collect();
        dumpy_core::znormalize(&raw)
            .unwrap()
            .iter()
            .map(|&v| v as f32)
            .collect()
    };
    for _ in 0..25 {
        for v in &series {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    std::fs::write(&data_path, &bytes).unwrap();
    let ds = DatasetHandle::open(&data_path, 32).unwrap();
    let index = build_index(&ds, cfg, &dir.path().join("index")).unwrap();
    let stats = index.stats();
    assert_eq!(
        stats.leaf_count, 1,
        "identical series populate a single region"
    );
    assert_eq!(stats.oversized_leaves, 1, "fallback must be flagged");
    let records = all_records(&index);
    assert_eq!(records.values().map(|v| v.len()).sum::<usize>(), 25);
}

#[test]
fn tiny_dataset_stays_first_layer() {
    let dir = TempDir::new().unwrap();
    let cfg = IndexConfig {
        n: 64,
        w: 8,
        b: 8,
        th: 100,
        ..Default::default()
    };
    let (_, index) = build_corpus(80, 3, &cfg, &dir);
    // no node ever exceeds th, so nothing splits below layer 1
    assert!(index.stats().height <= 2);
    let records = all_records(&index);
    assert_eq!(records.values().map(|v| v.len()).sum::<usize>(), 80);
}

#[test]
fn fuzzy_build_audit() {
    let dir = TempDir::new().unwrap();
    let mut cfg = small_cfg();
    let (ds, plain) = build_corpus(2500, 99, &cfg, &dir);
    cfg.fuzzy_f = 0.3;
    let fdir = dir.path().join("fuzzy");
    let fuzzy = build_index(&ds, cfg.clone(), &fdir).unwrap();

    // node/pack iSAX words unchanged versus the non-fuzzy build
    assert!(
        plain.same_isax_words(&fuzzy),
        "fuzzy duplication must not move words"
    );

    // copy counts: primary + duplicates <= max_replication
    let mut copies: HashMap<u64, u32> = HashMap::new();
    let records = all_records(&fuzzy);
    for ordinals in records.values() {
        for &o in ordinals {
            *copies.entry(o).or_insert(0) += 1;
        }
    }
    assert!(copies.values().all(|&c| c <= cfg.max_replication));
    assert!(copies.len() as u64 == ds.count);
    let dup_total: u32 = copies.values().map(|&c| c - 1).sum();
    assert!(dup_total > 0, "a 0.3 band should duplicate something");

    // packs never overflow
    for pack in fuzzy.packs_for_audit().into_iter().flatten() {
        if !pack.oversized {
            assert!(pack.live <= cfg.th);
        }
    }

    // every duplicate is inside its fuzzy band at its divergence node
    let w = cfg.w as usize;
    for (pack_id, ordinals) in &records {
        for &o in ordinals {
            if fuzzy.primary_pack_of(o) == Some(*pack_id) {
                continue;
            }
            let raw = ds.read_row(o).unwrap();
            let canonical = lift(&canonicalize(&raw).unwrap());
            let paa = dumpy_core::paa(&canonical, w).unwrap();
            assert!(
                fuzzy.duplicate_in_band(*pack_id, o, &paa, cfg.fuzzy_f),
                "ordinal {o} in pack {pack_id} is outside its band"
            );
        }
    }
}

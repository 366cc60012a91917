//! Two-pass index construction.
//!
//! Pass 1 scans the dataset once to fill the SAX table; the whole tree is
//! then grown from SAX rows alone (the root always splits on all `w`
//! segments; deeper overfull nodes split adaptively; small siblings are
//! packed). Pass 2 re-scans the raw data and appends each series to its
//! pack's extent through per-pack staging buffers.
//!
//! Fuzzy duplication never alters structure: split and packing decisions
//! are computed from primary members only, and qualified boundary series
//! are added to finished packs under the size threshold and the global
//! replication cap, in one deterministic pass over packs in arena order.

use std::collections::BTreeMap;
use std::ops::Range;
use std::path::Path;

use dumpy_core::series::{Breakpoints, IsaxWord, Sid};
use dumpy_core::split::{SaxRows, SplitParams};
use dumpy_core::CoreError;

use crate::config::IndexConfig;
use crate::dataset::{canonicalize, DatasetHandle};
use crate::error::{DumpyError, Result};
use crate::saxtable::{build_sax_table, SaxTable};
use crate::tree::pack::{agreed_bits, pack_leaves, LeafCandidate};
use crate::tree::storage::{encode_record, preallocate, record_size, write_bytes_at};
use crate::tree::{Extent, Index, InternalNode, LeafFile, LeafPack, NodeId, NodeRef, ROOT};

/// Everything the growth phase needs to read.
pub(crate) struct GrowContext<'a> {
    pub rows: SaxRows<'a>,
    pub paa: Option<&'a [f32]>,
    pub cfg: &'a IndexConfig,
    pub bp: &'a Breakpoints,
}

impl GrowContext<'_> {
    fn split_params(&self) -> SplitParams {
        SplitParams {
            th: self.cfg.th as usize,
            f_l: self.cfg.f_l,
            f_r: self.cfg.f_r,
            alpha: self.cfg.alpha,
        }
    }

    fn effective_rho(&self) -> f64 {
        if self.cfg.binary_split {
            0.0
        } else {
            self.cfg.rho
        }
    }

    fn paa_value(&self, ordinal: u32, seg: usize) -> f64 {
        self.paa.expect("fuzzy builds retain the PAA table")
            [ordinal as usize * self.cfg.w as usize + seg] as f64
    }
}

/// One built subtree with arena-local node ids; assembled into the global
/// arenas in ascending first-layer sid order so serial and parallel builds
/// produce identical structures.
pub(crate) struct SubtreeResult {
    pub internals: Vec<InternalNode>,
    pub packs: Vec<LeafPack>,
    /// Primary member ordinals per local pack.
    pub pack_primaries: Vec<Vec<u32>>,
    /// Fuzzy candidate ordinals per local pack (sorted, deduplicated).
    pub pools: Vec<Vec<u32>>,
    pub root: NodeRef,
}

fn refinement_bit(sym: u8, depth: u8, bits: u8) -> u32 {
    ((sym >> (bits - depth - 1)) & 1) as u32
}

/// Group ordinals by their sid under a node's split, ascending sid then
/// ordinal. Returns the sorted key/ordinal pairs as runs.
fn partition_by_sid(
    ctx: &GrowContext,
    isax: &IsaxWord,
    csl: &[u8],
    members: &[u32],
) -> Vec<(Sid, Vec<u32>)> {
    let bits = isax.bits();
    let mut keyed: Vec<(Sid, u32)> = members
        .iter()
        .map(|&ord| {
            let row = ctx.rows.row(ord);
            let mut sid: Sid = 0;
            for &seg in csl {
                let s = isax.symbol(seg as usize);
                sid = (sid << 1) | refinement_bit(row[seg as usize], s.depth, bits);
            }
            (sid, ord)
        })
        .collect();
    keyed.sort_unstable();
    let mut runs: Vec<(Sid, Vec<u32>)> = Vec::new();
    for (sid, ord) in keyed {
        match runs.last_mut() {
            Some((last, v)) if *last == sid => v.push(ord),
            _ => runs.push((sid, vec![ord])),
        }
    }
    runs
}

/// Ordinals of `run` (home sid differs from the receiving side in exactly
/// one chosen segment) whose PAA value lies within `f * width` of the
/// breakpoint separating the two refined regions, `width` being the
/// (clamped) width of the series' own region.
fn qualify_band(
    ctx: &GrowContext,
    isax: &IsaxWord,
    csl: &[u8],
    position: usize,
    own_bit: u8,
    run: &[u32],
    out: &mut Vec<u32>,
) {
    let f = ctx.cfg.fuzzy_f;
    let seg = csl[position] as usize;
    let sym = isax.symbol(seg);
    let sep = ctx.bp.split_threshold(sym.code, sym.depth);
    let width = ctx.bp.width((sym.code << 1) | own_bit, sym.depth + 1);
    let band = f * width;
    for &ord in run {
        if (ctx.paa_value(ord, seg) - sep).abs() < band {
            out.push(ord);
        }
    }
}

fn rows_all_identical(ctx: &GrowContext, members: &[u32]) -> bool {
    let first = ctx.rows.row(members[0]);
    members[1..].iter().all(|&o| ctx.rows.row(o) == first)
}

struct SubtreeBuilder<'a, 'b> {
    ctx: &'a GrowContext<'b>,
    internals: Vec<InternalNode>,
    packs: Vec<LeafPack>,
    pack_primaries: Vec<Vec<u32>>,
    pools: Vec<Vec<u32>>,
}

impl SubtreeBuilder<'_, '_> {
    fn new_pack(
        &mut self,
        isax: IsaxWord,
        members: Vec<Sid>,
        demotion_bits: u8,
        layer: u8,
        primaries: Vec<u32>,
        pool: Vec<u32>,
        oversized: bool,
    ) -> NodeId {
        let id = self.packs.len() as NodeId;
        self.packs.push(LeafPack {
            isax,
            members,
            demotion_bits,
            extent: Extent {
                file: u32::MAX,
                offset: 0,
                capacity: 0,
            },
            len: 0,
            live: 0,
            deleted: Vec::new(),
            oversized,
            layer,
            alive: true,
        });
        self.pack_primaries.push(primaries);
        self.pools.push(pool);
        id
    }

    /// Build the node for a region holding more primaries than the leaf
    /// threshold. Falls back to a flagged oversized pack when the rows
    /// cannot be separated.
    fn grow(
        &mut self,
        isax: IsaxWord,
        members: Vec<u32>,
        shadows: Vec<u32>,
        layer: u8,
    ) -> (NodeRef, u32) {
        let cfg = self.ctx.cfg;
        let plan = if rows_all_identical(self.ctx, &members) {
            Err(CoreError::CannotSplit)
        } else if cfg.binary_split {
            dumpy_core::split::choose_binary_split(
                &self.ctx.rows,
                &members,
                &isax,
                self.ctx.bp,
                &self.ctx.split_params(),
            )
        } else {
            dumpy_core::choose_split_plan(
                &self.ctx.rows,
                &members,
                &isax,
                self.ctx.bp,
                &self.ctx.split_params(),
            )
        };
        let plan = match plan {
            Ok(p) => p,
            Err(CoreError::CannotSplit) => {
                let mut pool = shadows;
                pool.sort_unstable();
                pool.dedup();
                let id = self.new_pack(isax, Vec::new(), 0, layer, members, pool, true);
                return (NodeRef::Pack(id), 1);
            }
            Err(e) => panic!("split failed: {e}"),
        };

        let node_id = self.internals.len() as NodeId;
        let size = members.len() as u64;
        self.internals.push(InternalNode {
            isax: isax.clone(),
            csl: plan.csl.clone(),
            routing: BTreeMap::new(),
            size,
            layer,
            leaf_count: 0,
            extractions: 0,
            file: u32::MAX,
            alive: true,
        });

        let runs = partition_by_sid(self.ctx, &isax, &plan.csl, &members);
        let shadow_runs = partition_by_sid(self.ctx, &isax, &plan.csl, &shadows);
        let leaf_count = self.split_node(node_id, &isax, &plan.csl, runs, shadow_runs, layer);
        self.internals[node_id as usize].leaf_count = leaf_count;
        (NodeRef::Internal(node_id), leaf_count)
    }

    /// Create the children of a split: pack the small sibling leaves first,
    /// then grow overfull children, ascending by sid.
    fn split_node(
        &mut self,
        node_id: NodeId,
        isax: &IsaxWord,
        csl: &[u8],
        runs: Vec<(Sid, Vec<u32>)>,
        shadow_runs: Vec<(Sid, Vec<u32>)>,
        layer: u8,
    ) -> u32 {
        let cfg = self.ctx.cfg;
        let lambda = csl.len();
        let fuzzy = cfg.fuzzy_f > 0.0;
        let th = cfg.th;

        let candidates: Vec<LeafCandidate> = runs
            .iter()
            .filter(|(_, v)| v.len() <= th as usize)
            .map(|(sid, v)| LeafCandidate {
                sid: *sid,
                size: v.len() as u32,
            })
            .collect();
        let assignments = pack_leaves(&candidates, self.ctx.effective_rho(), th, lambda);

        let run_of = |sid: Sid| {
            runs.iter()
                .find(|(s, _)| *s == sid)
                .map(|(_, v)| v.as_slice())
        };
        let shadow_of = |sid: Sid| {
            shadow_runs
                .iter()
                .find(|(s, _)| *s == sid)
                .map(|(_, v)| v.as_slice())
        };

        let mut leaf_count = 0u32;
        for assignment in &assignments {
            let mut pack_isax = isax.clone();
            for (pos, bit) in agreed_bits(&assignment.members, lambda) {
                pack_isax.refine(csl[pos] as usize, bit);
            }
            let mut primaries = Vec::with_capacity(assignment.size as usize);
            for &m in &assignment.members {
                primaries.extend_from_slice(run_of(m).expect("member run exists"));
            }
            primaries.sort_unstable();

            let mut pool = Vec::new();
            if fuzzy {
                for &m in &assignment.members {
                    if let Some(sh) = shadow_of(m) {
                        pool.extend_from_slice(sh);
                    }
                    for pos in 0..lambda {
                        let sibling = m ^ (1 << (lambda - 1 - pos));
                        if assignment.members.contains(&sibling) {
                            continue;
                        }
                        if let Some(run) = run_of(sibling) {
                            let own_bit = ((sibling >> (lambda - 1 - pos)) & 1) as u8;
                            qualify_band(self.ctx, isax, csl, pos, own_bit, run, &mut pool);
                        }
                    }
                }
                pool.sort_unstable();
                pool.dedup();
            }

            let pack_id = self.new_pack(
                pack_isax,
                assignment.members.clone(),
                assignment.demotion_bits,
                layer + 1,
                primaries,
                pool,
                false,
            );
            for &m in &assignment.members {
                self.internals[node_id as usize]
                    .routing
                    .insert(m, NodeRef::Pack(pack_id));
            }
            leaf_count += 1;
        }

        let mut overfull: Vec<(Sid, Vec<u32>, Vec<u32>)> = Vec::new();
        for (sid, members) in runs.iter().filter(|(_, v)| v.len() > th as usize) {
            let mut shadows_in: Vec<u32> = shadow_of(*sid).map(|s| s.to_vec()).unwrap_or_default();
            if fuzzy {
                for pos in 0..lambda {
                    let sibling = sid ^ (1 << (lambda - 1 - pos));
                    if let Some(run) = run_of(sibling) {
                        let own_bit = ((sibling >> (lambda - 1 - pos)) & 1) as u8;
                        qualify_band(self.ctx, isax, csl, pos, own_bit, run, &mut shadows_in);
                    }
                }
            }
            overfull.push((*sid, members.clone(), shadows_in));
        }
        for (sid, child_members, shadows_in) in overfull {
            let child_isax = isax.extend(csl, sid);
            let (child, child_leaves) = self.grow(child_isax, child_members, shadows_in, layer + 1);
            if let NodeRef::Pack(p) = child {
                // oversized fallback: the pack stands in for the region
                self.packs[p as usize].members = vec![sid];
            }
            self.internals[node_id as usize].routing.insert(sid, child);
            leaf_count += child_leaves;
        }
        leaf_count
    }
}

/// Grow one subtree (a first-layer overfull region) into local arenas.
pub(crate) fn grow_subtree(
    ctx: &GrowContext,
    isax: IsaxWord,
    members: Vec<u32>,
    shadows: Vec<u32>,
) -> SubtreeResult {
    let mut b = SubtreeBuilder {
        ctx,
        internals: Vec::new(),
        packs: Vec::new(),
        pack_primaries: Vec::new(),
        pools: Vec::new(),
    };
    let (root, _) = b.grow(isax, members, shadows, 1);
    SubtreeResult {
        internals: b.internals,
        packs: b.packs,
        pack_primaries: b.pack_primaries,
        pools: b.pools,
        root,
    }
}

/// The first layer: the root split on all segments.
pub(crate) struct FirstLayer {
    /// Populated sids ascending, with their primary ordinals.
    pub runs: Vec<(Sid, Vec<u32>)>,
}

pub(crate) fn group_first_layer(table: &SaxTable, cfg: &IndexConfig) -> FirstLayer {
    let w = cfg.w as usize;
    let bits = cfg.b as u8;
    let count = table.count();
    let mut keyed: Vec<(Sid, u32)> = (0..count as u32)
        .map(|ord| {
            let row = table.row(ord as u64);
            let mut sid: Sid = 0;
            for seg in 0..w {
                sid = (sid << 1) | ((row[seg] >> (bits - 1)) as Sid & 1);
            }
            (sid, ord)
        })
        .collect();
    keyed.sort_unstable();
    let mut runs: Vec<(Sid, Vec<u32>)> = Vec::new();
    for (sid, ord) in keyed {
        match runs.last_mut() {
            Some((last, v)) if *last == sid => v.push(ord),
            _ => runs.push((sid, vec![ord])),
        }
    }
    FirstLayer { runs }
}

/// Global build state shared by the serial and the staged parallel builder.
pub(crate) struct Scaffold {
    pub internals: Vec<InternalNode>,
    pub packs: Vec<LeafPack>,
    pub pack_primaries: Vec<Vec<u32>>,
    pub pools: Vec<Vec<u32>>,
    /// ordinal -> primary pack.
    pub primary_target: Vec<u32>,
    /// Planned record count per pack (primaries + assigned duplicates).
    pub planned: Vec<u32>,
    pub duplicates: BTreeMap<u64, Vec<NodeId>>,
    pub copies: Vec<u8>,
    /// Overfull first-layer regions still to grow: (sid, members, shadows).
    pub pending: Vec<(Sid, Vec<u32>, Vec<u32>)>,
}

impl Scaffold {
    /// Build the root and the first layer: pack the small sids, record the
    /// overfull ones for subtree growth, and qualify first-layer fuzzy
    /// candidates.
    pub(crate) fn first_layer(ctx: &GrowContext, layer1: FirstLayer) -> Scaffold {
        let cfg = ctx.cfg;
        let w = cfg.w as usize;
        let count = ctx.rows.row_count() as u32;
        let root_isax = IsaxWord::root(w, cfg.b as u8);
        let root_csl: Vec<u8> = (0..w as u8).collect();
        let root = InternalNode {
            isax: root_isax.clone(),
            csl: root_csl.clone(),
            routing: BTreeMap::new(),
            size: count as u64,
            layer: 0,
            leaf_count: 0,
            extractions: 0,
            file: u32::MAX,
            alive: true,
        };
        let mut s = Scaffold {
            internals: vec![root],
            packs: Vec::new(),
            pack_primaries: Vec::new(),
            pools: Vec::new(),
            primary_target: vec![u32::MAX; count as usize],
            planned: Vec::new(),
            duplicates: BTreeMap::new(),
            copies: vec![1; count as usize],
            pending: Vec::new(),
        };

        let th = cfg.th;
        let fuzzy = cfg.fuzzy_f > 0.0;
        let runs = layer1.runs;
        let run_of = |sid: Sid| {
            runs.iter()
                .find(|(s2, _)| *s2 == sid)
                .map(|(_, v)| v.as_slice())
        };

        let candidates: Vec<LeafCandidate> = runs
            .iter()
            .filter(|(_, v)| v.len() <= th as usize)
            .map(|(sid, v)| LeafCandidate {
                sid: *sid,
                size: v.len() as u32,
            })
            .collect();
        let assignments = pack_leaves(&candidates, ctx.effective_rho(), th, w);

        for assignment in &assignments {
            let mut pack_isax = root_isax.clone();
            for (pos, bit) in agreed_bits(&assignment.members, w) {
                pack_isax.refine(pos, bit);
            }
            let mut primaries = Vec::with_capacity(assignment.size as usize);
            for &m in &assignment.members {
                primaries.extend_from_slice(run_of(m).expect("member run exists"));
            }
            primaries.sort_unstable();
            let mut pool = Vec::new();
            if fuzzy {
                for &m in &assignment.members {
                    for pos in 0..w {
                        let sibling = m ^ (1 << (w - 1 - pos));
                        if assignment.members.contains(&sibling) {
                            continue;
                        }
                        if let Some(run) = run_of(sibling) {
                            let own_bit = ((sibling >> (w - 1 - pos)) & 1) as u8;
                            qualify_band(ctx, &root_isax, &root_csl, pos, own_bit, run, &mut pool);
                        }
                    }
                }
                pool.sort_unstable();
                pool.dedup();
            }
            let pack_id = s.packs.len() as NodeId;
            s.packs.push(LeafPack {
                isax: pack_isax,
                members: assignment.members.clone(),
                demotion_bits: assignment.demotion_bits,
                extent: Extent {
                    file: u32::MAX,
                    offset: 0,
                    capacity: 0,
                },
                len: 0,
                live: 0,
                deleted: Vec::new(),
                oversized: false,
                layer: 1,
                alive: true,
            });
            for &ord in &primaries {
                s.primary_target[ord as usize] = pack_id;
            }
            s.pack_primaries.push(primaries);
            s.pools.push(pool);
            s.planned.push(0);
            for &m in &assignment.members {
                s.internals[ROOT as usize]
                    .routing
                    .insert(m, NodeRef::Pack(pack_id));
            }
            s.internals[ROOT as usize].leaf_count += 1;
        }

        for (sid, members) in runs.iter().filter(|(_, v)| v.len() > th as usize) {
            let mut shadows = Vec::new();
            if fuzzy {
                for pos in 0..w {
                    let sibling = sid ^ (1 << (w - 1 - pos));
                    if let Some(run) = run_of(sibling) {
                        let own_bit = ((sibling >> (w - 1 - pos)) & 1) as u8;
                        qualify_band(ctx, &root_isax, &root_csl, pos, own_bit, run, &mut shadows);
                    }
                }
            }
            s.pending.push((*sid, members.clone(), shadows));
        }
        s
    }

    /// Splice one grown subtree into the global arenas, remapping its local
    /// node ids. Must be called in ascending first-layer sid order.
    pub(crate) fn append_subtree(&mut self, sid: Sid, result: SubtreeResult) {
        let internal_base = self.internals.len() as NodeId;
        let pack_base = self.packs.len() as NodeId;
        let remap = |r: NodeRef| match r {
            NodeRef::Internal(i) => NodeRef::Internal(internal_base + i),
            NodeRef::Pack(p) => NodeRef::Pack(pack_base + p),
        };
        for mut node in result.internals {
            let routing = std::mem::take(&mut node.routing);
            node.routing = routing.into_iter().map(|(k, v)| (k, remap(v))).collect();
            self.internals.push(node);
        }
        for (local, (pack, primaries)) in result
            .packs
            .into_iter()
            .zip(result.pack_primaries)
            .enumerate()
        {
            let id = pack_base + local as NodeId;
            for &ord in &primaries {
                self.primary_target[ord as usize] = id;
            }
            self.packs.push(pack);
            self.pack_primaries.push(primaries);
            self.planned.push(0);
        }
        self.pools.extend(result.pools);
        let root_ref = remap(result.root);
        if let NodeRef::Pack(p) = root_ref {
            // a whole first-layer region collapsed to an oversized fallback
            self.packs[p as usize].members = vec![sid];
        }
        self.internals[ROOT as usize].routing.insert(sid, root_ref);
        self.internals[ROOT as usize].leaf_count += match root_ref {
            NodeRef::Internal(i) => self.internals[i as usize].leaf_count,
            NodeRef::Pack(_) => 1,
        };
    }

    /// Deterministic duplicate assignment: packs in arena order, candidate
    /// ordinals ascending, capped by the pack threshold and the global
    /// replication budget. Safe to run incrementally (first-layer packs
    /// before subtrees) because arena order is assignment order.
    pub(crate) fn assign_duplicates(&mut self, cfg: &IndexConfig, range: Range<usize>) {
        for pack_id in range {
            let pack = &self.packs[pack_id];
            let primaries = self.pack_primaries[pack_id].len() as u32;
            let mut planned = primaries;
            if !pack.oversized {
                for &ord in &self.pools[pack_id] {
                    if planned >= cfg.th {
                        break;
                    }
                    if (self.copies[ord as usize] as u32) < cfg.max_replication {
                        self.copies[ord as usize] += 1;
                        self.duplicates
                            .entry(ord as u64)
                            .or_default()
                            .push(pack_id as NodeId);
                        planned += 1;
                    }
                }
            }
            self.planned[pack_id] = planned;
        }
    }
}

/// Assign leaf files and pack extents. First-layer packs each get their own
/// file; every first-layer internal subtree gets one file holding its packs
/// as consecutive extents in arena order.
pub(crate) fn assign_extents(scaffold: &mut Scaffold, cfg: &IndexConfig) -> Vec<LeafFile> {
    let mut files = assign_layer1_extents(scaffold, cfg);
    assign_subtree_extents(scaffold, cfg, &mut files);
    files
}

/// Extents of the first-layer packs (each its own file); callable as soon
/// as the first layer and its duplicates are settled.
pub(crate) fn assign_layer1_extents(scaffold: &mut Scaffold, cfg: &IndexConfig) -> Vec<LeafFile> {
    let rec = record_size(cfg) as u64;
    let mut files = Vec::new();
    // oversized first-layer fallbacks appear only after subtree growth and
    // get their file with the subtrees
    for (id, pack) in scaffold.packs.iter_mut().enumerate() {
        if pack.layer == 1 && !pack.oversized {
            let file = files.len() as u32;
            files.push(LeafFile {
                name: format!("l1p{:05}.bin", pack.members[0]),
                allocated: scaffold.planned[id] as u64 * rec,
            });
            pack.extent = Extent {
                file,
                offset: 0,
                capacity: scaffold.planned[id],
            };
        }
    }
    files
}

/// Extents of every deeper pack, one file per first-layer subtree.
pub(crate) fn assign_subtree_extents(
    scaffold: &mut Scaffold,
    cfg: &IndexConfig,
    files: &mut Vec<LeafFile>,
) {
    let rec = record_size(cfg) as u64;
    // subtrees, ascending sid; packs are contiguous arena ranges per subtree
    let subtree_roots: Vec<(Sid, NodeRef)> = scaffold.internals[ROOT as usize]
        .routing
        .iter()
        .filter_map(|(sid, r)| match r {
            NodeRef::Internal(i) => Some((*sid, NodeRef::Internal(*i))),
            // a first-layer region that collapsed to an oversized fallback
            NodeRef::Pack(p) if scaffold.packs[*p as usize].extent.file == u32::MAX => {
                Some((*sid, NodeRef::Pack(*p)))
            }
            NodeRef::Pack(_) => None,
        })
        .collect();
    for (sid, root_ref) in subtree_roots {
        let node = match root_ref {
            NodeRef::Pack(p) => {
                let file = files.len() as u32;
                let planned = scaffold.planned[p as usize];
                scaffold.packs[p as usize].extent = Extent {
                    file,
                    offset: 0,
                    capacity: planned,
                };
                files.push(LeafFile {
                    name: format!("l1n{sid:05}.bin"),
                    allocated: planned as u64 * rec,
                });
                continue;
            }
            NodeRef::Internal(i) => i,
        };
        let file = files.len() as u32;
        let mut offset = 0u64;
        let mut stack = vec![NodeRef::Internal(node)];
        // deterministic walk: arena order equals creation order, so simply
        // assigning by ascending pack id within this subtree is enough
        let mut subtree_packs = Vec::new();
        while let Some(r) = stack.pop() {
            match r {
                NodeRef::Pack(p) => {
                    if !subtree_packs.contains(&p) {
                        subtree_packs.push(p);
                    }
                }
                NodeRef::Internal(i) => {
                    scaffold.internals[i as usize].file = file;
                    for child in scaffold.internals[i as usize].routing.values() {
                        stack.push(*child);
                    }
                }
            }
        }
        subtree_packs.sort_unstable();
        for p in subtree_packs {
            let planned = scaffold.planned[p as usize];
            scaffold.packs[p as usize].extent = Extent {
                file,
                offset,
                capacity: planned,
            };
            offset += planned as u64 * rec;
        }
        files.push(LeafFile {
            name: format!("l1n{sid:05}.bin"),
            allocated: offset,
        });
    }
}

/// Per-pack staging buffer set for pass 2. Appends stay in scan order, so
/// records land in each extent sorted by ordinal no matter the batch size.
pub(crate) struct StagingBuffers {
    rec: usize,
    capacity_records: usize,
    buffers: Vec<Vec<u8>>,
    written: Vec<u32>,
}

impl StagingBuffers {
    pub fn new(pack_count: usize, rec: usize, capacity_records: usize) -> Self {
        Self {
            rec,
            capacity_records,
            buffers: vec![Vec::new(); pack_count],
            written: vec![0; pack_count],
        }
    }

    pub fn stage(&mut self, pack: u32, record: &[u8]) {
        self.buffers[pack as usize].extend_from_slice(record);
    }

    pub fn needs_flush(&self, pack: u32) -> bool {
        self.buffers[pack as usize].len() >= self.capacity_records * self.rec
    }

    /// Flush one pack's staged records as a single append.
    pub fn flush(
        &mut self,
        index_dir: &Path,
        files: &[LeafFile],
        pack: &LeafPack,
        id: u32,
    ) -> Result<()> {
        let buf = &mut self.buffers[id as usize];
        if buf.is_empty() {
            return Ok(());
        }
        let records = (buf.len() / self.rec) as u32;
        let offset = pack.extent.offset + self.written[id as usize] as u64 * self.rec as u64;
        let path = index_dir
            .join("leaves")
            .join(&files[pack.extent.file as usize].name);
        write_bytes_at(&path, offset, buf)?;
        self.written[id as usize] += records;
        buf.clear();
        Ok(())
    }
}

/// Pass 2 for a subset of packs: re-scan the raw data and append each
/// series' record to every target pack selected by `filter`.
pub(crate) fn materialize_packs(
    ds: &DatasetHandle,
    cfg: &IndexConfig,
    dir: &Path,
    files: &[LeafFile],
    packs: &[LeafPack],
    primary_target: &[u32],
    duplicates: &BTreeMap<u64, Vec<NodeId>>,
    filter: impl Fn(u32) -> bool,
    sbuf_records: usize,
) -> Result<Vec<u32>> {
    let rec = record_size(cfg);
    let bp = Breakpoints::new(cfg.cardinality())?;
    let mut staging = StagingBuffers::new(packs.len(), rec, sbuf_records);
    let mut record = Vec::with_capacity(rec);
    for file in files {
        preallocate(&dir.join("leaves").join(&file.name), file.allocated)?;
    }
    ds.scan_batches(cfg.batch_bytes, |first_ordinal, rows| {
        for (i, raw) in rows.chunks_exact(ds.n).enumerate() {
            let ordinal = first_ordinal + i as u64;
            let primary = primary_target[ordinal as usize];
            let dups = duplicates.get(&ordinal);
            let wants_primary = filter(primary);
            let dup_targets: Vec<u32> = dups
                .map(|v| v.iter().copied().filter(|&p| filter(p)).collect())
                .unwrap_or_default();
            if !wants_primary && dup_targets.is_empty() {
                continue;
            }
            let canonical = canonicalize(raw)?;
            let sax = crate::saxtable::sax_word_of(&canonical, cfg.w as usize, &bp)?;
            record.clear();
            encode_record(&mut record, ordinal, &canonical, &sax);
            if wants_primary {
                staging.stage(primary, &record);
                if staging.needs_flush(primary) {
                    staging.flush(dir, files, &packs[primary as usize], primary)?;
                }
            }
            for p in dup_targets {
                staging.stage(p, &record);
                if staging.needs_flush(p) {
                    staging.flush(dir, files, &packs[p as usize], p)?;
                }
            }
        }
        Ok(())
    })?;
    for id in 0..packs.len() as u32 {
        staging.flush(dir, files, &packs[id as usize], id)?;
    }
    Ok(staging.written)
}

/// Serial reference build: pass 1, tree growth, fuzzy assignment, extent
/// assignment, pass 2, persistence.
pub fn build_index(ds: &DatasetHandle, cfg: IndexConfig, dir: &Path) -> Result<Index> {
    Ok(build_index_instrumented(ds, cfg, dir)?.0)
}

/// The serial build with a per-phase report. Phases run strictly one after
/// another, so the report's overlap fractions are zero by construction.
pub fn build_index_instrumented(
    ds: &DatasetHandle,
    cfg: IndexConfig,
    dir: &Path,
) -> Result<(Index, crate::pbuild::PipelineReport)> {
    use std::time::Instant;
    cfg.validate()?;
    if ds.n != cfg.n as usize {
        return Err(DumpyError::invalid(
            "dataset series length differs from config",
        ));
    }
    std::fs::create_dir_all(dir.join("leaves"))?;
    let total = Instant::now();
    let bp = Breakpoints::new(cfg.cardinality())?;

    let t1 = Instant::now();
    let (table, paa) = build_sax_table(ds, &cfg, &bp, cfg.fuzzy_f > 0.0)?;
    let pass1_wall = t1.elapsed().as_secs_f64();

    let t2 = Instant::now();
    let ctx = GrowContext {
        rows: table.rows(),
        paa: paa.as_deref(),
        cfg: &cfg,
        bp: &bp,
    };
    let layer1 = group_first_layer(&table, &cfg);
    let mut scaffold = Scaffold::first_layer(&ctx, layer1);
    // first-layer packs take duplicates before any subtree exists
    let first_layer_packs = scaffold.packs.len();
    scaffold.assign_duplicates(&cfg, 0..first_layer_packs);

    let pending = std::mem::take(&mut scaffold.pending);
    for (sid, members, shadows) in pending {
        let isax = scaffold.internals[ROOT as usize]
            .isax
            .extend(&ctx_root_csl(&cfg), sid);
        let result = grow_subtree(&ctx, isax, members, shadows);
        let before = scaffold.packs.len();
        scaffold.append_subtree(sid, result);
        let after = scaffold.packs.len();
        scaffold.assign_duplicates(&cfg, before..after);
    }
    let files = assign_extents(&mut scaffold, &cfg);
    let growth_wall = t2.elapsed().as_secs_f64();

    let t3 = Instant::now();
    let written = materialize_packs(
        ds,
        &cfg,
        dir,
        &files,
        &scaffold.packs,
        &scaffold.primary_target,
        &scaffold.duplicates,
        |_| true,
        SBUF_RECORDS,
    )?;
    finish_packs(&mut scaffold.packs, &scaffold.planned, &written);
    let pass2_wall = t3.elapsed().as_secs_f64();

    let raw_bytes = ds.count * ds.n as u64 * 4;
    let written_bytes = written.iter().map(|&c| c as u64).sum::<u64>() * record_size(&cfg) as u64;
    let report = crate::pbuild::PipelineReport::serial(
        &[
            ("pass1-sax-table", pass1_wall, raw_bytes, 0),
            ("tree-growth", growth_wall, 0, 0),
            ("pass2-materialize", pass2_wall, raw_bytes, written_bytes),
        ],
        total.elapsed().as_secs_f64(),
    );

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
    Ok((index, report))
}

pub(crate) const SBUF_RECORDS: usize = 256;

fn ctx_root_csl(cfg: &IndexConfig) -> Vec<u8> {
    (0..cfg.w as u8).collect()
}

/// Final bookkeeping after pass 2: written counts become the live sizes.
pub(crate) fn finish_packs(packs: &mut [LeafPack], planned: &[u32], written: &[u32]) {
    for (id, pack) in packs.iter_mut().enumerate() {
        assert_eq!(
            written[id], planned[id],
            "pack {id}: wrote {} of {} planned records",
            written[id], planned[id]
        );
        pack.len = written[id];
        pack.live = written[id];
        pack.deleted = vec![0; (pack.len as usize + 63) / 64];
    }
}
